double mix(double a1, double a2)
{
  return 0.5 * (a1 + a2);
}

int main()
{
  return (int)mix(2.0, 4.0);
}
