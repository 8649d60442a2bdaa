// pseudocode exported from binary p10
int sub_11C9(int a1)
{
  int v2; // [rsp+Ch]

  v2 = a1 * a1;
  return v2 + 1;
}

int main(int argc, char **argv)
{
  int v4; // [rsp+8h] BYREF

  scanf("%d", &v4);
  printf("%d\n", sub_11C9(v4));
  return 0;
}
