/* splitpair: print "key -> value" for a KEY=VALUE argument. */
#include <stdio.h>
#include <stdlib.h>
#include <string.h>

int main(int argc, char **argv)
{
    char *pair, *eq;
    int rc = 0;

    if (argc != 2) {
        fprintf(stderr, "usage: %s KEY=VALUE\n", argv[0]);
        return 2;
    }
    pair = strdup(argv[1]);
    if (pair == NULL) {
        perror("strdup");
        return 1;
    }
    eq = strchr(pair, '=');
    if (eq == NULL) {
        fprintf(stderr, "missing '=' in %s\n", pair);
        free(pair);
        rc = 1;
        goto done;
    }
    *eq = '\0';
    printf("%s -> %s\n", pair, eq + 1);
done:
    free(pair);
    return rc;
}
