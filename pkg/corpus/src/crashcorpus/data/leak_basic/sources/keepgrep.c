/* keepgrep: copy stdin lines that contain the marker word to stdout. */
#include <stdio.h>
#include <stdlib.h>
#include <string.h>

static const char MARKER[] = "keep";

int main(void)
{
    char line[512];

    while (fgets(line, sizeof line, stdin) != NULL) {
        char *copy = strdup(line);

        if (copy == NULL) {
            perror("strdup");
            return 1;
        }
        if (strstr(copy, MARKER) != NULL) {
            fputs(copy, stdout);
            free(copy);
        }
    }
    return 0;
}
