/* runmode: map a mode name to its iteration budget and report the tier. */
#include <stdio.h>
#include <string.h>

struct mode_settings {
    int verbose;
    int budget;
};

static void parse_mode(struct mode_settings *out, const char *name)
{
    out->verbose = 0;
    if (strcmp(name, "fast") == 0) {
        out->budget = 10;
    } else if (strcmp(name, "slow") == 0) {
        out->budget = 200;
    } else if (strcmp(name, "debug") == 0) {
        out->verbose = 1;
        out->budget = 200;
    }
}

int main(int argc, char **argv)
{
    struct mode_settings settings;

    if (argc != 2) {
        fprintf(stderr, "usage: %s MODE\n", argv[0]);
        return 2;
    }
    parse_mode(&settings, argv[1]);
    if (settings.verbose)
        fprintf(stderr, "mode %s\n", argv[1]);
    if (settings.budget > 100)
        puts("heavy");
    else
        puts("light");
    return 0;
}
