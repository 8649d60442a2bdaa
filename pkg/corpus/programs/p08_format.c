// pseudocode exported from binary p08
#include <cstdio>

int main(int argc, char **argv)
{
  int v4; // [rsp+8h] BYREF
  int i; // [rsp+Ch]

  if ( scanf("%d", &v4) != 1 )
    return 1;
  for ( i = 1; i <= v4; ++i )
    printf("%d ", i * i);
  return 0;
}
