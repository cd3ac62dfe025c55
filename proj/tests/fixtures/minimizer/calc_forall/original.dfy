method Fill(a: array<int>, v: int)
  modifies a
{
  var i := 0;
  while i < a.Length
  {
    a[i] := v;
    i := i + 1;
  }
}

method TestFill()
{
  var a := new int[3];
  Fill(a, 7);
  assert a[1] == 7;
}
