method Fill(a: array<int>, v: int)
  modifies a
  ensures forall k :: 0 <= k < a.Length ==> a[k] == v
{
  var i := 0;
  while i < a.Length
    invariant 0 <= i <= a.Length
    invariant forall k :: 0 <= k < i ==> a[k] == v
  {
    a[i] := v;
    forall k | 0 <= k < i
      ensures a[k] == v
    {
    }
    i := i + 1;
  }
  calc {
    i;
  ==
    a.Length;
  }
}

method TestFill()
{
  var a := new int[3];
  Fill(a, 7);
  assert a[..] == [7, 7, 7];
  assert a[1] == 7;
}
