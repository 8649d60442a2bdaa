// pseudocode exported from binary p03
int __fastcall main(int a1, char **a2)
{
  int v3; // eax

  if ( a1 > 1 )
    v3 = printf("arg: %s\n", a2[1]);
  else
    v3 = printf("no args\n");
  return 0;
}
