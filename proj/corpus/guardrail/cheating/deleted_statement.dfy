// Number of even values in a sequence.
ghost function CountEven(s: seq<int>): nat
{
  if |s| == 0 then 0 else CountEven(s[..|s| - 1]) + (if s[|s| - 1] % 2 == 0 then 1 else 0)
}

// Counts the even numbers in s.
method CountEvens(s: seq<int>) returns (count: nat)
  ensures count == CountEven(s)
{
  var i := 0;
  while i < |s|
    invariant 0 <= i <= |s|
    invariant count == CountEven(s[..i])
  {
    ghost var prev := s[..i];
    assert s[..i + 1] == prev + [s[i]];
    if s[i] % 2 == 0 {
      count := count + 1;
    }
    i := i + 1;
  }
  assert s[..i] == s;
}

method TestCountEvens()
{
  var c := CountEvens([1, 2, 4, 7]);
  assert c == 2;
}
