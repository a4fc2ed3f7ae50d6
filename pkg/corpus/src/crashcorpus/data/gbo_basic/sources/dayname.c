/* dayname: map a weekday index read from stdin to its name. */
#include <stdio.h>
#include <stdlib.h>

static const char *const DAY_NAMES[] = {
    "monday", "tuesday", "wednesday", "thursday", "friday",
};

enum { DAY_COUNT = sizeof DAY_NAMES / sizeof DAY_NAMES[0] };

int main(void)
{
    char line[64];
    long index;

    if (fgets(line, sizeof line, stdin) == NULL) {
        fprintf(stderr, "no input\n");
        return 2;
    }
    index = strtol(line, NULL, 10);
    if (index < 0 || index > DAY_COUNT) {
        fprintf(stderr, "index out of range\n");
        return 1;
    }
    puts(DAY_NAMES[index]);
    return 0;
}
