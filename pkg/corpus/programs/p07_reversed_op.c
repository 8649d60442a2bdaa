// pseudocode exported from binary p07
#include <cstdio>

int main(int argc, char **argv)
{
  int v4; // [rsp+8h] BYREF
  int v5; // [rsp+Ch] BYREF

  if ( scanf("%d %d", &v4, &v5) != 2 )
    return 1;
  printf("%d\n", v4 - v5);
  return 0;
}
