/* fib.c - naive recursion */
int fib(int n) {
  if (n < 2) return n;
  int a = fib(n - 1);
  int b = fib(n - 2);
  return a + b;
}

int main(void) {
  int r = 7;
  r = fib(r);
  return r;
}
