use super::{split_lines, DiffHunk, HunkLine, LineOp, PatchSet, CONTEXT_LINES};

/// One step of a line edit script. Indices point into the old/new line lists.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EditOp {
    Keep { old: usize, new: usize },
    Delete { old: usize },
    Insert { new: usize },
}

/// Shortest edit script between two line lists (Myers). Among scripts of equal
/// length, deletions are taken before insertions.
pub fn edit_script<T: PartialEq>(a: &[T], b: &[T]) -> Vec<EditOp> {
    let prefix = a.iter().zip(b).take_while(|(x, y)| x == y).count();
    let suffix = a[prefix..]
        .iter()
        .rev()
        .zip(b[prefix..].iter().rev())
        .take_while(|(x, y)| x == y)
        .count();
    let (mid_a, mid_b) = (&a[prefix..a.len() - suffix], &b[prefix..b.len() - suffix]);

    let mut ops: Vec<EditOp> = (0..prefix).map(|i| EditOp::Keep { old: i, new: i }).collect();
    for op in myers(mid_a, mid_b) {
        ops.push(match op {
            EditOp::Keep { old, new } => EditOp::Keep { old: old + prefix, new: new + prefix },
            EditOp::Delete { old } => EditOp::Delete { old: old + prefix },
            EditOp::Insert { new } => EditOp::Insert { new: new + prefix },
        });
    }
    let (ta, tb) = (a.len() - suffix, b.len() - suffix);
    ops.extend((0..suffix).map(|i| EditOp::Keep { old: ta + i, new: tb + i }));
    normalize_runs(ops)
}

fn myers<T: PartialEq>(a: &[T], b: &[T]) -> Vec<EditOp> {
    let (n, m) = (a.len() as isize, b.len() as isize);
    let max = (n + m) as usize;
    if max == 0 {
        return Vec::new();
    }
    let off = max as isize + 1;
    let mut v = vec![0isize; 2 * max + 3];
    // trace[d] holds v[-(d+1)..=d+1] as it stood at the start of round d.
    let mut trace: Vec<Vec<isize>> = Vec::new();
    let idx = |k: isize| (k + off) as usize;

    'outer: for d in 0..=max as isize {
        trace.push(v[idx(-d - 1)..=idx(d + 1)].to_vec());
        let mut k = -d;
        while k <= d {
            let mut x = if k == -d || (k != d && v[idx(k - 1)] < v[idx(k + 1)]) {
                v[idx(k + 1)]
            } else {
                v[idx(k - 1)] + 1
            };
            let mut y = x - k;
            while x < n && y < m && a[x as usize] == b[y as usize] {
                x += 1;
                y += 1;
            }
            v[idx(k)] = x;
            if x >= n && y >= m {
                break 'outer;
            }
            k += 2;
        }
    }

    let mut ops = Vec::new();
    let (mut x, mut y) = (n, m);
    for (d, snap) in trace.iter().enumerate().rev() {
        let d = d as isize;
        let at = |k: isize| snap[(k + d + 1) as usize];
        let k = x - y;
        let prev_k = if k == -d || (k != d && at(k - 1) < at(k + 1)) { k + 1 } else { k - 1 };
        let (prev_x, prev_y) = if d == 0 { (0, 0) } else { (at(prev_k), at(prev_k) - prev_k) };
        while x > prev_x && y > prev_y {
            x -= 1;
            y -= 1;
            ops.push(EditOp::Keep { old: x as usize, new: y as usize });
        }
        if d > 0 {
            if x == prev_x {
                ops.push(EditOp::Insert { new: prev_y as usize });
            } else {
                ops.push(EditOp::Delete { old: prev_x as usize });
            }
        }
        x = prev_x;
        y = prev_y;
    }
    ops.reverse();
    ops
}

/// Within each maximal run of changes, deletions precede insertions.
fn normalize_runs(ops: Vec<EditOp>) -> Vec<EditOp> {
    let mut out = Vec::with_capacity(ops.len());
    let mut dels = Vec::new();
    let mut ins = Vec::new();
    for op in ops {
        match op {
            EditOp::Delete { .. } => dels.push(op),
            EditOp::Insert { .. } => ins.push(op),
            EditOp::Keep { .. } => {
                out.append(&mut dels);
                out.append(&mut ins);
                out.push(op);
            }
        }
    }
    out.append(&mut dels);
    out.append(&mut ins);
    out
}

/// Line diff of `old` → `new` as an unbound patch set. Changes separated by at
/// most `2 * CONTEXT_LINES` unchanged lines share a hunk.
pub fn compute_diff(old: &str, new: &str) -> PatchSet {
    let a = split_lines(old);
    let b = split_lines(new);
    let ops = edit_script(&a, &b);

    // Positions of change ops, grouped into hunks.
    let changes: Vec<usize> = ops
        .iter()
        .enumerate()
        .filter(|(_, op)| !matches!(op, EditOp::Keep { .. }))
        .map(|(i, _)| i)
        .collect();
    let mut groups: Vec<(usize, usize)> = Vec::new();
    for &i in &changes {
        match groups.last_mut() {
            Some((_, end)) if i - *end - 1 <= 2 * CONTEXT_LINES => *end = i,
            _ => groups.push((i, i)),
        }
    }

    // Old-side line index reached before op `i`.
    let mut old_pos: Vec<usize> = Vec::with_capacity(ops.len() + 1);
    let mut cursor = 0;
    for op in &ops {
        old_pos.push(cursor);
        if !matches!(op, EditOp::Insert { .. }) {
            cursor += 1;
        }
    }
    old_pos.push(cursor);

    let hunks = groups
        .into_iter()
        .map(|(first, last)| {
            let old_start = old_pos[first];
            let old_end = old_pos[last + 1];
            let lines = ops[first..=last]
                .iter()
                .map(|op| match *op {
                    EditOp::Keep { old, .. } => HunkLine { op: LineOp::Keep, text: a[old].to_owned() },
                    EditOp::Delete { old } => HunkLine { op: LineOp::Remove, text: a[old].to_owned() },
                    EditOp::Insert { new } => HunkLine { op: LineOp::Add, text: b[new].to_owned() },
                })
                .collect();
            let ctx_from = old_start.saturating_sub(CONTEXT_LINES);
            let ctx_to = (old_end + CONTEXT_LINES).min(a.len());
            DiffHunk {
                old_start,
                context_before: a[ctx_from..old_start].iter().map(|s| s.to_string()).collect(),
                lines,
                context_after: a[old_end..ctx_to].iter().map(|s| s.to_string()).collect(),
            }
        })
        .collect();
    PatchSet { hunks, ..Default::default() }
}
