// Sum of the elements of an array.
method SumArray(a: array<int>) returns (s: int)
{
  s := 0;
  var i := 0;
  while i < a.Length
  {
    s := s + a[i];
    i := i + 1;
  }
}

method TestSumArray()
{
  var a := new int[] [1, 2, 3];
  var s := SumArray(a);
  assert s == 6;
}
