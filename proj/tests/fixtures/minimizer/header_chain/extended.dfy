function Abs(x: int): int
  ensures Abs(x) >= 0
  ensures Abs(x) == x || Abs(x) == -x
{
  if x < 0 then -x else x
}

method Dist(a: int, b: int) returns (d: int)
  requires true
  ensures d >= 0
  ensures d == Abs(a - b)
{
  d := Abs(a - b);
  assert d >= 0;
  assert d == Abs(b - a);
}

method TestDist()
{
  var d := Dist(2, 7);
  assert Abs(2 - 7) == 5;
  assert d == 5;
}
