// Sum of the elements of a sequence, accumulated from left to right.
ghost function Sum(s: seq<int>): int
{
  if |s| == 0 then 0 else Sum(s[..|s| - 1]) + s[|s| - 1]
}

// Adds up the elements of an array.
method SumArray(a: array<int>) returns (total: int)
  ensures total == Sum(a[..])
{
  total := 0;
  for i := 0 to a.Length
    invariant 0 <= i <= a.Length
    invariant total == Sum(a[..i])
  {
    assert a[..i + 1][..i] == a[..i];
    total := total + a[i];
  }
  assert a[..a.Length] == a[..];
}

method TestSumArray()
{
  var a := new int[] [1, 2, 3];
  assert a[..] == [1, 2, 3]; // helper
  var s := SumArray(a);
  assert s == 6;
  // assert s == 5; //@invalid
}
