// Reverses the elements of an array in place.
method Reverse(a: array<int>)
  modifies a
  ensures forall k :: 0 <= k < a.Length ==> a[k] == old(a[a.Length - 1 - k])
{
  var i, j := 0, a.Length - 1;
  while i < j
    invariant i + j == a.Length - 1
    invariant 0 <= i <= j + 1 <= a.Length
    invariant forall k :: 0 <= k < i || j < k < a.Length ==> a[k] == old(a[a.Length - 1 - k])
    invariant forall k :: i <= k <= j ==> a[k] == old(a[k])
  {
    a[i], a[j] := a[j], a[i];
    i, j := i + 1, j - 1;
  }
}

method TestReverse()
{
  var a := new int[] [1, 2, 3];
  Reverse(a);
  assert a[..] == [3, 2, 1];
}
