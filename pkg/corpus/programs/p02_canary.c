// pseudocode exported from binary p02
int main(int argc, char **argv)
{
  char s[64]; // [rsp+0h] [rbp-50h] BYREF
  unsigned long v5; // [rsp+48h] [rbp-8h]

  v5 = __readfsqword(0x28u);
  fgets(s, 64, stdin);
  printf("len=%zu\n", strlen(s));
  if ( v5 != __readfsqword(0x28u) )
    __stack_chk_fail();
  return 0;
}
