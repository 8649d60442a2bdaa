// pseudocode exported from binary p05
#include <cstdio>

int main(int argc, char **argv)
{
  unsigned int v4[4] = { -3, 1, 4, 1 }; // type inferred from stack layout
  int v5; // [rsp+1Ch] BYREF

  scanf("%d", &v5);
  printf("%d\n", (int)v4[v5 & 3]);
  return 0;
}
