"""Independent brute-force references for the mask pipeline.

Deliberately naive: set arithmetic for dilation, stack-based flood fill for
labeling, pairwise loops for IOU merging. These must never import the
implementations they check.
"""

import numpy as np


def brute_dilate(bits: np.ndarray, kernel_size: int, iters: int) -> np.ndarray:
    h, w = bits.shape
    r = kernel_size // 2
    cur = bits.copy()
    for _ in range(iters):
        out = np.zeros_like(cur)
        for y, x in zip(*np.nonzero(cur)):
            out[max(0, y - r) : min(h, y + r + 1), max(0, x - r) : min(w, x + r + 1)] = True
        cur = out
    return cur


def brute_regions(bits: np.ndarray) -> list[tuple[int, tuple[int, int, int, int]]]:
    """(area, (x, y, w, h)) per 8-connected region, in scan order."""
    h, w = bits.shape
    seen = np.zeros_like(bits, dtype=bool)
    out = []
    for sy in range(h):
        for sx in range(w):
            if not bits[sy, sx] or seen[sy, sx]:
                continue
            stack = [(sy, sx)]
            seen[sy, sx] = True
            cells = []
            while stack:
                y, x = stack.pop()
                cells.append((y, x))
                for dy in (-1, 0, 1):
                    for dx in (-1, 0, 1):
                        ny, nx = y + dy, x + dx
                        if 0 <= ny < h and 0 <= nx < w and bits[ny, nx] and not seen[ny, nx]:
                            seen[ny, nx] = True
                            stack.append((ny, nx))
            ys = [c[0] for c in cells]
            xs = [c[1] for c in cells]
            box = (min(xs), min(ys), max(xs) - min(xs) + 1, max(ys) - min(ys) + 1)
            out.append((len(cells), box))
    return out


def brute_iou(a: tuple[int, int, int, int], b: tuple[int, int, int, int]) -> float:
    ax, ay, aw, ah = a
    bx, by, bw, bh = b
    ix = max(0, min(ax + aw, bx + bw) - max(ax, bx))
    iy = max(0, min(ay + ah, by + bh) - max(ay, by))
    inter = ix * iy
    if inter == 0:
        return 0.0
    return inter / (aw * ah + bw * bh - inter)


def brute_union(a, b):
    ax, ay, aw, ah = a
    bx, by, bw, bh = b
    x = min(ax, bx)
    y = min(ay, by)
    return (x, y, max(ax + aw, bx + bw) - x, max(ay + ah, by + bh) - y)


def brute_merge(boxes: list[tuple[int, int, int, int]], threshold: float) -> list[tuple]:
    work = sorted(boxes)
    changed = True
    while changed:
        changed = False
        for i in range(len(work)):
            for j in range(i + 1, len(work)):
                if brute_iou(work[i], work[j]) > threshold:
                    merged = brute_union(work[i], work[j])
                    work = sorted([b for k, b in enumerate(work) if k not in (i, j)] + [merged])
                    changed = True
                    break
            if changed:
                break
    return work


def rects_intersect(a: tuple[int, int, int, int], b: tuple[int, int, int, int]) -> bool:
    ax, ay, aw, ah = a
    bx, by, bw, bh = b
    return ax < bx + bw and bx < ax + aw and ay < by + bh and by < ay + ah
