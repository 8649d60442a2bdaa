// pseudocode exported from binary p04
int main(int argc, char **argv)
{
  v3 = 0;
  scanf("%d", &n);
  for ( i = 0; i < n; ++i )
    v3 += i;
  printf("%d\n", v3);
  return 0;
}
