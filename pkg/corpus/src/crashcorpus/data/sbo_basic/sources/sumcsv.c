/* sumcsv: sum a comma-separated list of integers given as one argument. */
#include <stdio.h>
#include <stdlib.h>
#include <string.h>

enum { MAX_VALUES = 8 };

int main(int argc, char **argv)
{
    int values[MAX_VALUES];
    int count = 0;
    long total = 0;
    char *token;
    int i;

    if (argc != 2) {
        fprintf(stderr, "usage: %s N,N,...\n", argv[0]);
        return 2;
    }
    token = strtok(argv[1], ",");
    while (token != NULL) {
        values[count] = atoi(token);
        count++;
        token = strtok(NULL, ",");
    }
    for (i = 0; i < count; i++)
        total += values[i];
    printf("%ld\n", total);
    return 0;
}
