/* race.c - two unsynchronized increments on one counter */
int counter = 0;
int done = 0;
int inc(void) {
  int t = counter;        /* racy read          */
  /* scheduling point */
  t = t + 1;
  counter = t;            /* racy write-back    */
  done = 1;
  return 0;
}

int main(void) {
  spawn(inc);
  int t = counter;        /* main races too     */
  /* scheduling point */
  t = t + 1;
  counter = t;
  while (!done)           /* wait for the worker */
    ;
  t = counter;
  assert(t == 2);         /* fails on a lost update */
  return 0;
}
