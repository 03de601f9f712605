/* list.c - build a small linked list on the heap */
struct node { int v; struct node *next; };
int count = 4;

int main(void) {
  struct node *head = 0;
  int i = 0;
  while (i < count) {
    struct node *tmp = alloc(sizeof *tmp);
    tmp->v = i;
    tmp->next = head;
    head = tmp;
    i = i + 1;
  }
  /* scheduling point: inspect the heap here */
  return 0;
}
