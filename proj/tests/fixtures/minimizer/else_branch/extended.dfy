method Max(x: int, y: int) returns (m: int)
  ensures m >= x && m >= y
  ensures m == x || m == y
{
  if x >= y {
    m := x;
  } else {
    m := y;
  }
  if m == x {
    assert m >= y;
  } else {
    assert m == y;
    assert m >= x;
  }
}

method TestMax()
{
  var m := Max(3, 5);
  if m != 5 {
    assert false;
  }
  assert m == 5;
}
