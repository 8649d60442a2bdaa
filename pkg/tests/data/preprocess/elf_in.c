int __cxa_finalize(void *a1);
void _gmon_start__(void);

int start_routine(void)
{
  __cxa_finalize(0LL);
  if ( &_gmon_start__ )
    _gmon_start__();
  return 1;
}
