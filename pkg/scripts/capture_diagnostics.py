#!/usr/bin/env python3
"""Capture a golden corpus of raw compiler stderr for the diagnostics parser tests.

Compiles a set of deliberately broken C++ sources once with the system
compiler and freezes each stderr stream under tests/data/diagnostics/ along
with a meta.json recording the workdir prefix in effect at capture time (the
normalization tests grep for it). Re-run only to refresh the corpus after a
compiler upgrade; the captured files are committed.
"""

from __future__ import annotations

import json
import subprocess
import sys
import tempfile
from pathlib import Path

REPO = Path(__file__).resolve().parent.parent
OUT = REPO / "tests" / "data" / "diagnostics"

BROKEN = {
    "undeclared_identifier": "int main() { return x; }\n",
    "missing_semicolon": "int main() { int a = 1\n  return a; }\n",
    "unknown_type": "__int64 f(void) { return 0; }\nint main() { return f(); }\n",
    "missing_header": '#include "no_such_header.h"\nint main() { return 0; }\n',
    "narrowing": "int main() { unsigned int a[2] = { -1, 2 }; return (int)a[0]; }\n",
    "redefinition": "int f() { return 1; }\nint f() { return 2; }\nint main() { return f(); }\n",
    "wrong_arg_count": "int add(int a, int b) { return a + b; }\nint main() { return add(1); }\n",
    "undeclared_function": 'int main() { puts("hi"); return 0; }\n',
    "assign_to_const": "int main() { const int c = 1; c = 2; return c; }\n",
    "bad_member": "struct P { int x; };\nint main() { P p; return p.y; }\n",
    "template_mess": "#include <vector>\nint main() { std::vector<int> v = 3; return v[0]; }\n",
    "scope_error": 'int main() { cout << "hi"; return 0; }\n',
    "error_directive": '#error "deliberately broken"\nint main() { return 0; }\n',
    "invalid_conversion": "int main() { int *p = 42; return *p; }\n",
    "multiple_errors": "int main() { int a = b + c; undeclared(); return d; }\n",
    "warning_and_error": "int g() { int unused = 1; }\nint main() { return g() + e; }\n",
    "missing_main": "int helper(int a) { return a + 1; }\n",
    "goto_label": "int main() { goto done; int x = 1; return x; }\n",
}


def main() -> int:
    compiler = sys.argv[1] if len(sys.argv) > 1 else "g++"
    OUT.mkdir(parents=True, exist_ok=True)
    with tempfile.TemporaryDirectory(prefix="redec-golden-") as tmp:
        prefix = str(Path(tmp))
        for name, code in BROKEN.items():
            src = Path(tmp) / name / "unit.cpp"
            src.parent.mkdir()
            src.write_text(code, encoding="utf-8")
            proc = subprocess.run(
                [compiler, "-std=c++17", "-Wall", "-O0", str(src), "-o", str(src.parent / "unit.bin")],
                capture_output=True,
                timeout=60,
            )
            stderr = proc.stderr.decode("utf-8", errors="replace")
            (OUT / f"{name}.txt").write_text(stderr, encoding="utf-8")
            print(f"{name}: rc={proc.returncode} bytes={len(stderr)}")
        version = subprocess.run([compiler, "--version"], capture_output=True, text=True).stdout.splitlines()[0]
        (OUT / "meta.json").write_text(
            json.dumps({"prefix": prefix, "compiler": version, "files": sorted(BROKEN)}, indent=2) + "\n",
            encoding="utf-8",
        )
    return 0


if __name__ == "__main__":
    sys.exit(main())
