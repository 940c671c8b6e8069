ACCEPTANCE_LINES = []


def record(number, title, ok, detail=""):
    line = f"criterion {number:2d} [{'PASS' if ok else 'FAIL'}] {title}"
    if detail:
        line += f" :: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok
