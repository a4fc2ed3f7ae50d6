/* notes: tiny in-memory note list driven by stdin commands.
 *
 *   add TEXT   append a note
 *   clear      drop all notes
 *   print      print notes in order
 */
#include <stdio.h>
#include <stdlib.h>
#include <string.h>

static char **notes;
static size_t note_count;
static size_t note_cap;

static void clear_notes(void)
{
    size_t i;

    for (i = 0; i < note_count; i++)
        free(notes[i]);
    free(notes);
    note_count = 0;
}

static void add_note(const char *text)
{
    if (note_count == note_cap) {
        note_cap = note_cap ? note_cap * 2 : 4;
        notes = realloc(notes, note_cap * sizeof *notes);
        if (notes == NULL) {
            perror("realloc");
            exit(1);
        }
    }
    notes[note_count] = strdup(text);
    if (notes[note_count] == NULL) {
        perror("strdup");
        exit(1);
    }
    note_count++;
}

static void print_notes(void)
{
    size_t i;

    for (i = 0; i < note_count; i++)
        puts(notes[i]);
}

int main(void)
{
    char line[256];

    while (fgets(line, sizeof line, stdin) != NULL) {
        line[strcspn(line, "\n")] = '\0';
        if (strncmp(line, "add ", 4) == 0)
            add_note(line + 4);
        else if (strcmp(line, "clear") == 0)
            clear_notes();
        else if (strcmp(line, "print") == 0)
            print_notes();
        else if (line[0] != '\0')
            fprintf(stderr, "unknown command: %s\n", line);
    }
    clear_notes();
    return 0;
}
