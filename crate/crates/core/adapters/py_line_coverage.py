"""Line coverage for a single Python program run.

usage: py_line_coverage.py PROGRAM ENTRY
  ENTRY is `script` or `function:NAME`.

The program's input arrives on stdin. Its own output is discarded; the
report printed instead is `total N` followed by one `hit L` line per
executed statement line.
"""
import ast
import io
import json
import sys


def statement_lines(tree):
    return {node.lineno for node in ast.walk(tree) if isinstance(node, ast.stmt)}


def main():
    path, entry = sys.argv[1], sys.argv[2]
    with open(path) as f:
        source = f.read()
    stmts = statement_lines(ast.parse(source, path))
    code = compile(source, path, "exec")
    stdin_text = sys.stdin.read()
    hits = set()

    def local(frame, event, arg):
        if event == "line":
            hits.add(frame.f_lineno)
        return local

    def tracer(frame, event, arg):
        if frame.f_code.co_filename != path:
            return None
        return local

    real_stdout = sys.stdout
    sys.stdout = io.StringIO()
    sys.stdin = io.StringIO(stdin_text)
    env = {"__name__": "__main__", "__file__": path}
    sys.settrace(tracer)
    try:
        exec(code, env)
        if entry.startswith("function:"):
            name = entry.split(":", 1)[1]
            fn = env.get(name)
            if fn is None and "Solution" in env:
                fn = getattr(env["Solution"](), name)
            fn(*json.loads(stdin_text))
    except BaseException:
        pass
    finally:
        sys.settrace(None)
        sys.stdout = real_stdout

    print("total", len(stmts))
    for line in sorted(hits & stmts):
        print("hit", line)


if __name__ == "__main__":
    main()
