// pseudocode exported from binary p09
__int64 sub_13A9(int a1)
{
  return 3LL * a1;
}

int __fastcall main(int a1, char **a2)
{
  int v4; // [rsp+Ch] BYREF

  std::istream::operator>>(&std::cin, &v4);
  std::ostream::operator<<(&std::cout, sub_13A9(v4));
  std::operator<<(&std::cout, "\n");
  return 0;
}
