// pseudocode exported from binary p06
#include <cstdio>
#include <cstdlib>

int main(int argc, char **argv)
{
  int v4; // [rsp+Ch] BYREF
  int *v5; // [rsp+10h]
  int v6; // [rsp+1Ch]
  int i; // [rsp+18h]

  v4 = 0;
  if ( scanf("%d", &v4) != 1 )
    return 1;
  v5 = (int *)malloc(4 * v4);
  for ( i = 0; i <= v4; ++i )
    v5[i] = 2 * i;
  v6 = 0;
  for ( i = 0; i < v4; ++i )
    v6 += v5[i];
  printf("%d\n", v6);
  free(v5);
  return 0;
}
