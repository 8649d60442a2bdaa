// pseudocode exported from binary p01
int __cxa_finalize(void *a1);
void _gmon_start__(void);

int main(int argc, char **argv)
{
  int v4; // [rsp+Ch] [rbp-4h] BYREF

  __cxa_finalize(0LL);
  if ( &_gmon_start__ )
    _gmon_start__();
  v4 = 0;
  scanf("%d", &v4);
  printf("%d\n", 2 * v4);
  return 0;
}
