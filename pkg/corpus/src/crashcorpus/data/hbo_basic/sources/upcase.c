/* upcase: print the uppercased first line of a file. */
#include <ctype.h>
#include <stdio.h>
#include <stdlib.h>
#include <string.h>

enum { SHORT_CAP = 16 };

/* Copy src into dst, uppercasing letters. dst must hold strlen(src)+1. */
static void upcase_into(char *dst, const char *src)
{
    size_t i = 0;

    for (; src[i] != '\0'; i++)
        dst[i] = (char)toupper((unsigned char)src[i]);
    dst[i] = '\0';
}

/* Return a freshly allocated uppercased copy of line. */
static char *upcase_dup(const char *line)
{
    size_t len = strlen(line);
    size_t cap = len < SHORT_CAP ? SHORT_CAP : len;
    char *out = malloc(cap);

    if (out == NULL) {
        perror("malloc");
        exit(1);
    }
    upcase_into(out, line);
    return out;
}

int main(int argc, char **argv)
{
    char line[256];
    FILE *fh;
    char *shout;

    if (argc != 2) {
        fprintf(stderr, "usage: %s FILE\n", argv[0]);
        return 2;
    }
    fh = fopen(argv[1], "r");
    if (fh == NULL) {
        perror(argv[1]);
        return 2;
    }
    if (fgets(line, sizeof line, fh) == NULL)
        line[0] = '\0';
    fclose(fh);
    line[strcspn(line, "\n")] = '\0';

    shout = upcase_dup(line);
    puts(shout);
    free(shout);
    return 0;
}
