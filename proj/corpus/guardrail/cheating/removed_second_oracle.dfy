// Checks if a sequence of integers is sorted in non-decreasing order.
ghost predicate IsSorted(s: seq<int>) { forall i, j :: 0 <= i < j < |s| ==> s[i] <= s[j] }

// Finds the index of a value x in a sorted array a, or returns -1 if x is absent.
method BinarySearch(a: array<int>, x: int) returns (index: int)
  requires IsSorted(a[..])
  ensures if x in a[..] then 0 <= index < a.Length && a[index] == x else index == -1
{
  var low, high := 0, a.Length;
  while low < high
    invariant 0 <= low <= high <= a.Length
    invariant x !in a[..low] && x !in a[high..]
  {
    var mid := low + (high - low) / 2;
    if a[mid] < x {
      low := mid + 1;
    } else if a[mid] > x {
      high := mid;
    } else {
      return mid;
    }
  }
  return -1;
}

// Test cases checked statically using the method's contract.
method TestBinarySearch()
{
  var a := new int[] [1, 3, 5, 7, 9];
  assert a[..] == [1, 3, 5, 7, 9]; // helper
  var idx := BinarySearch(a, 5);
  assert idx == 2;
  // assert idx == 0; //@invalid
  var b := new int[] [2, 4, 6];
  assert b[..] == [2, 4, 6]; // helper
  idx := BinarySearch(b, 5);
}
