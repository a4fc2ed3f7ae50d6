"""Source navigation: compile-db capture, bounded views, symbol lookup."""

import hashlib
import json
import os
import shutil
import subprocess

import pytest

from sanrepair.errors import BuildFailed, NoSuchFile, PathEscapesRoot, ServerUnavailable
from sanrepair.nav import (
    SNIPPET_CAP,
    SymbolHit,
    capture_compile_db,
    render_hits,
    resolve_symbol,
    view_source,
)

GCC = shutil.which("gcc")
needs_gcc = pytest.mark.skipif(not GCC, reason="gcc not available")
CLANGD = shutil.which("clangd")


# --- view_source ---

@pytest.fixture
def source_tree(tmp_path):
    lines = [f"int line_{i:03d};" for i in range(1, 51)]
    (tmp_path / "src").mkdir()
    (tmp_path / "src" / "main.c").write_text("\n".join(lines) + "\n", encoding="utf-8")
    (tmp_path / "short.c").write_text("\n".join(f"s{i}" for i in range(1, 11)) + "\n", encoding="utf-8")
    big = "\n".join(f"row_{i:04d}" for i in range(1, 501)) + "\n"
    (tmp_path / "big.c").write_text(big, encoding="utf-8")
    return tmp_path


def test_window_with_gutter(source_tree):
    snippet = view_source(source_tree, "src/main.c", line=25, radius=2)
    assert (snippet.start_line, snippet.end_line) == (23, 27)
    assert snippet.path == os.path.join("src", "main.c")
    assert snippet.numbered_lines.splitlines() == [
        "23\tint line_023;",
        "24\tint line_024;",
        "25\tint line_025;",
        "26\tint line_026;",
        "27\tint line_027;",
    ]
    assert not snippet.elided


def test_clamping_to_file_bounds_sets_elided(source_tree):
    snippet = view_source(source_tree, "short.c", line=5, radius=100)
    assert (snippet.start_line, snippet.end_line) == (1, 10)
    assert snippet.elided


def test_default_radius_is_thirty(source_tree):
    snippet = view_source(source_tree, "src/main.c", line=40)
    assert (snippet.start_line, snippet.end_line) == (10, 50)


def test_snippet_cap_enforced(source_tree):
    snippet = view_source(source_tree, "big.c", line=250, radius=150)
    assert snippet.end_line - snippet.start_line + 1 == SNIPPET_CAP
    assert snippet.elided
    assert "row_0250" in snippet.numbered_lines


def test_line_beyond_eof_clamps_to_tail(source_tree):
    snippet = view_source(source_tree, "short.c", line=1000, radius=3)
    assert snippet.end_line == 10
    assert snippet.elided


def test_gutter_numbers_round_trip(source_tree):
    snippet = view_source(source_tree, "src/main.c", line=10, radius=8)
    raw = (source_tree / "src" / "main.c").read_text(encoding="utf-8").split("\n")
    for row in snippet.numbered_lines.splitlines():
        number, _, text = row.partition("\t")
        assert raw[int(number) - 1] == text


def test_traversal_outside_root_rejected(source_tree):
    with pytest.raises(PathEscapesRoot):
        view_source(source_tree, "../../etc/passwd", line=1)


def test_symlink_escape_rejected(source_tree):
    os.symlink("/etc", source_tree / "sneaky")
    with pytest.raises(PathEscapesRoot):
        view_source(source_tree, "sneaky/passwd", line=1)


def test_absolute_path_inside_root_accepted(source_tree):
    snippet = view_source(source_tree, str(source_tree / "short.c"), line=2, radius=1)
    assert snippet.start_line == 1


def test_missing_file(source_tree):
    with pytest.raises(NoSuchFile):
        view_source(source_tree, "src/nope.c", line=1)


def test_empty_file_yields_single_blank_line(source_tree):
    (source_tree / "empty.c").write_text("", encoding="utf-8")
    snippet = view_source(source_tree, "empty.c", line=1, radius=5)
    assert snippet.numbered_lines == "1\t"


# --- capture_compile_db ---

@pytest.fixture
def c_project(tmp_path):
    (tmp_path / "src").mkdir()
    (tmp_path / "src" / "alpha.c").write_text(
        "int alpha(void) { return 1; }\n", encoding="utf-8"
    )
    (tmp_path / "src" / "beta.c").write_text(
        "int alpha(void);\nint main(void) { return alpha(); }\n", encoding="utf-8"
    )
    return tmp_path


BUILD = "gcc -c src/alpha.c -o alpha.o && gcc -c src/beta.c -o beta.o && gcc alpha.o beta.o -o prog"


@needs_gcc
def test_capture_records_one_entry_per_source(c_project):
    db = capture_compile_db(c_project, BUILD)
    files = sorted(os.path.basename(e["file"]) for e in db.entries)
    assert files == ["alpha.c", "beta.c"]  # the link step records nothing
    for entry in db.entries:
        assert os.path.isfile(entry["file"])
        assert entry["directory"] == str(c_project)
        assert "gcc" in os.path.basename(entry["arguments"][0])
        assert "-c" in entry["arguments"]
    on_disk = json.loads((c_project / "compile_commands.json").read_text(encoding="utf-8"))
    assert len(on_disk) == 2


@needs_gcc
def test_multi_source_invocation_fans_out(c_project):
    db = capture_compile_db(c_project, "gcc -c src/alpha.c src/beta.c")
    assert len(db.entries) == 2


@needs_gcc
def test_subdirectory_builds_record_their_cwd(c_project):
    db = capture_compile_db(c_project, "cd src && gcc -c alpha.c")
    assert len(db.entries) == 1
    assert db.entries[0]["directory"] == str(c_project / "src")


@needs_gcc
def test_failing_build_propagates_status_and_stderr(c_project):
    (c_project / "src" / "broken.c").write_text("int main( {\n", encoding="utf-8")
    with pytest.raises(BuildFailed) as info:
        capture_compile_db(c_project, "gcc -c src/broken.c")
    assert info.value.status != 0
    assert "error" in info.value.stderr_tail


@needs_gcc
def test_capture_is_deterministic(c_project):
    capture_compile_db(c_project, BUILD)
    first = (c_project / "compile_commands.json").read_bytes()
    capture_compile_db(c_project, BUILD)
    second = (c_project / "compile_commands.json").read_bytes()
    assert first == second


@needs_gcc
def test_wrapper_does_not_alter_build_outputs(c_project):
    subprocess.run(BUILD, shell=True, cwd=c_project, check=True)
    bare = hashlib.sha256((c_project / "prog").read_bytes()).hexdigest()
    (c_project / "prog").unlink()
    capture_compile_db(c_project, BUILD)
    wrapped = hashlib.sha256((c_project / "prog").read_bytes()).hexdigest()
    assert bare == wrapped


# --- resolve_symbol ---

@pytest.fixture
def symbol_tree(tmp_path):
    (tmp_path / "class.c").write_text(
        "#include \"api.h\"\n"
        "void mrb_remove_method(int cls, int mid) {\n"
        "    purge_cache(cls, mid);\n"
        "}\n",
        encoding="utf-8",
    )
    (tmp_path / "vm.c").write_text(
        "void caller(void) {\n"
        "    mrb_remove_method(1, 2);\n"
        "}\n"
        "int mrb_remove_method_t_unrelated;\n",
        encoding="utf-8",
    )
    (tmp_path / "api.h").write_text(
        "void mrb_remove_method(int cls, int mid);\n", encoding="utf-8"
    )
    return tmp_path


def test_grep_fallback_finds_defining_file(symbol_tree):
    hits = resolve_symbol("mrb_remove_method", symbol_tree)
    assert all(hit.kind == "text-match" for hit in hits)
    paths = {hit.path for hit in hits}
    assert "class.c" in paths and "vm.c" in paths and "api.h" in paths


def test_word_boundaries_respected(symbol_tree):
    hits = resolve_symbol("mrb_remove_method", symbol_tree)
    assert not any(hit.path == "vm.c" and hit.line == 4 for hit in hits)


def test_unknown_symbol_is_empty(symbol_tree):
    assert resolve_symbol("no_such_symbol_at_all", symbol_tree) == []


def test_hit_cap(symbol_tree):
    (symbol_tree / "many.c").write_text(
        "\n".join("int use_target;" for _ in range(100)), encoding="utf-8"
    )
    hits = resolve_symbol("use_target", symbol_tree, max_hits=10)
    assert len(hits) == 10


def test_render_marks_low_confidence(symbol_tree):
    hits = resolve_symbol("mrb_remove_method", symbol_tree)
    text = render_hits("mrb_remove_method", hits)
    assert "lower confidence" in text
    assert "class.c" in text
    assert render_hits("ghost", []).startswith("symbol 'ghost': no definitions")


class _DeadClient:
    def workspace_symbols(self, _query):
        raise ServerUnavailable("server crashed")


def test_dead_server_falls_back_to_grep(symbol_tree):
    hits = resolve_symbol("mrb_remove_method", symbol_tree, client=_DeadClient())
    assert hits and all(hit.kind == "text-match" for hit in hits)


@pytest.mark.skipif(not CLANGD, reason="clangd not available")
def test_language_server_agrees_with_fallback(symbol_tree, c_project):
    from sanrepair.lsp import LspClient

    capture_compile_db(symbol_tree, "gcc -c class.c vm.c || true")
    client = LspClient(str(symbol_tree), compile_commands_dir=str(symbol_tree))
    try:
        server_hits = resolve_symbol("mrb_remove_method", symbol_tree, client=client)
        fallback_hits = resolve_symbol("mrb_remove_method", symbol_tree)
        definitions = {h.path for h in server_hits if h.kind == "definition"}
        assert definitions <= {h.path for h in fallback_hits}
        assert "class.c" in {h.path for h in server_hits}
    finally:
        client.close()


def test_missing_server_binary_is_server_unavailable(tmp_path):
    from sanrepair.lsp import LspClient

    with pytest.raises(ServerUnavailable):
        LspClient(str(tmp_path), server_argv=["definitely-not-a-server"])
