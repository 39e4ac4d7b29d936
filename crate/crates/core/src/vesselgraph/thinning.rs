use crate::raster::BinaryMask;

/// Offsets of the 8-neighbourhood in ring order starting north, clockwise.
pub(crate) const RING: [(i64, i64); 8] = [
    (0, -1),
    (1, -1),
    (1, 0),
    (1, 1),
    (0, 1),
    (-1, 1),
    (-1, 0),
    (-1, -1),
];

pub(crate) fn ring(mask: &BinaryMask, x: usize, y: usize) -> [bool; 8] {
    let (x, y) = (x as i64, y as i64);
    RING.map(|(dx, dy)| mask.get_i(x + dx, y + dy))
}

pub(crate) fn neighbour_count(r: &[bool; 8]) -> usize {
    r.iter().filter(|&&b| b).count()
}

/// Number of background-to-foreground transitions around the ring.
pub(crate) fn crossing_number(r: &[bool; 8]) -> usize {
    (0..8).filter(|&i| !r[i] && r[(i + 1) % 8]).count()
}

/// Yokoi connectivity number for 8-connected foreground; a pixel is simple
/// (removable without changing topology) exactly when this is 1.
fn yokoi8(r: &[bool; 8]) -> i32 {
    // Yokoi indexes from east, counter-clockwise: E, NE, N, NW, W, SW, S, SE
    let v = |k: usize| {
        let idx = [2, 1, 0, 7, 6, 5, 4, 3][k % 8];
        !r[idx] as i32
    };
    [0, 2, 4, 6]
        .iter()
        .map(|&k| v(k) - v(k) * v(k + 1) * v(k + 2))
        .sum()
}

fn removable(r: &[bool; 8]) -> bool {
    neighbour_count(r) >= 2 && yokoi8(r) == 1
}

/// Guo–Hall deletion test for one sub-iteration.
fn guo_hall(r: &[bool; 8], pass: usize) -> bool {
    // counter-clockwise from east: E, NE, N, NW, W, SW, S, SE
    let b = [r[2], r[1], r[0], r[7], r[6], r[5], r[4], r[3]];
    let c = [0, 2, 4, 6]
        .iter()
        .filter(|&&i| !b[i] && (b[i + 1] || b[(i + 2) % 8]))
        .count();
    let n1 = [1, 3, 5, 7].iter().filter(|&&k| b[k] || b[k - 1]).count();
    let n2 = [1, 3, 5, 7].iter().filter(|&&k| b[k] || b[(k + 1) % 8]).count();
    let m = if pass == 0 {
        (b[1] || b[2] || !b[7]) && b[0]
    } else {
        (b[5] || b[6] || !b[3]) && b[4]
    };
    c == 1 && (2..=3).contains(&n1.min(n2)) && !m
}

/// Two-subiteration parallel thinning (Guo–Hall rule). Candidates from each
/// sub-iteration are deleted one by one in row-major order, each after
/// re-checking that it is still a simple non-end pixel, so thin diagonal
/// structures cannot be broken apart. A final pass removes the leftover
/// pixels of any 2x2 block.
pub fn skeletonize(mask: &BinaryMask) -> BinaryMask {
    let mut skel = mask.clone();
    let (w, h) = skel.dims();
    loop {
        let mut changed = false;
        for pass in 0..2 {
            let marked: Vec<(usize, usize)> = skel
                .foreground()
                .filter(|&(x, y)| guo_hall(&ring(&skel, x, y), pass))
                .collect();
            for (x, y) in marked {
                if removable(&ring(&skel, x, y)) {
                    skel.set(x, y, false);
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
    loop {
        let mut changed = false;
        for y in 0..h.saturating_sub(1) {
            for x in 0..w.saturating_sub(1) {
                let block = [(x, y), (x + 1, y), (x, y + 1), (x + 1, y + 1)];
                if !block.iter().all(|&(a, b)| skel.get(a, b)) {
                    continue;
                }
                if let Some(&(a, b)) = block.iter().find(|&&(a, b)| removable(&ring(&skel, a, b))) {
                    skel.set(a, b, false);
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
    skel
}

/// Number of 8-connected foreground components.
pub fn count_components(mask: &BinaryMask) -> usize {
    label_components(mask).1
}

/// 8-connected labelling in row-major discovery order; background is `u32::MAX`.
pub fn label_components(mask: &BinaryMask) -> (Vec<u32>, usize) {
    let (w, h) = mask.dims();
    let mut labels = vec![u32::MAX; w * h];
    let mut next = 0u32;
    let mut stack = Vec::new();
    for start in 0..w * h {
        if !mask.bits()[start] || labels[start] != u32::MAX {
            continue;
        }
        labels[start] = next;
        stack.push(start);
        while let Some(i) = stack.pop() {
            let (x, y) = ((i % w) as i64, (i / w) as i64);
            for (dx, dy) in RING {
                let (nx, ny) = (x + dx, y + dy);
                if mask.get_i(nx, ny) {
                    let j = ny as usize * w + nx as usize;
                    if labels[j] == u32::MAX {
                        labels[j] = next;
                        stack.push(j);
                    }
                }
            }
        }
        next += 1;
    }
    (labels, next as usize)
}

pub fn has_2x2_block(mask: &BinaryMask) -> bool {
    let (w, h) = mask.dims();
    (0..h.saturating_sub(1)).any(|y| {
        (0..w.saturating_sub(1))
            .any(|x| mask.get(x, y) && mask.get(x + 1, y) && mask.get(x, y + 1) && mask.get(x + 1, y + 1))
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn yokoi_examples() {
        // isolated pixel
        assert_eq!(yokoi8(&[false; 8]), 0);
        // line interior: N and S set
        let mut r = [false; 8];
        r[0] = true;
        r[4] = true;
        assert_eq!(yokoi8(&r), 2);
        // end of line
        let mut r = [false; 8];
        r[2] = true;
        assert_eq!(yokoi8(&r), 1);
        // interior pixel
        assert_eq!(yokoi8(&[true; 8]), 0);
    }

    #[test]
    fn thin_line_is_unchanged() {
        let m = BinaryMask::from_ascii(&[
            "..........",
            ".########.",
            "..........",
        ]);
        assert_eq!(skeletonize(&m), m);
        let d = BinaryMask::from_ascii(&["#....", ".#...", "..#..", "...#.", "....#"]);
        assert_eq!(skeletonize(&d), d);
    }

    #[test]
    fn bar_thins_to_centre_row() {
        let mut rows = vec![".".repeat(22)];
        for _ in 0..3 {
            rows.push(format!(".{}.", "#".repeat(20)));
        }
        rows.push(".".repeat(22));
        let refs: Vec<&str> = rows.iter().map(String::as_str).collect();
        let s = skeletonize(&BinaryMask::from_ascii(&refs));
        let golden = BinaryMask::from_ascii(&[
            "......................",
            "......................",
            "..##################..",
            "......................",
            "......................",
        ]);
        assert_eq!(s, golden);
    }

    #[test]
    fn block_and_ring_keep_topology() {
        let solid = BinaryMask::from_ascii(&["......", ".####.", ".####.", ".####.", ".####.", "......"]);
        let s = skeletonize(&solid);
        assert_eq!(count_components(&s), 1);
        assert!(!has_2x2_block(&s));
        assert!(s.is_subset_of(&solid));
        let ring = BinaryMask::from_ascii(&[
            ".......",
            ".#####.",
            ".#####.",
            ".##.##.",
            ".#####.",
            ".#####.",
            ".......",
        ]);
        let s = skeletonize(&ring);
        assert_eq!(count_components(&s), 1);
        // the hole stays enclosed: not 4-reachable from the border through background
        let mut seen = [false; 49];
        let mut stack = vec![(0usize, 0usize)];
        seen[0] = true;
        while let Some((x, y)) = stack.pop() {
            for (dx, dy) in [(1i64, 0i64), (-1, 0), (0, 1), (0, -1)] {
                let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                if (0..7).contains(&nx) && (0..7).contains(&ny) {
                    let (nx, ny) = (nx as usize, ny as usize);
                    if !s.get(nx, ny) && !seen[ny * 7 + nx] {
                        seen[ny * 7 + nx] = true;
                        stack.push((nx, ny));
                    }
                }
            }
        }
        assert!(!s.get(3, 3));
        assert!(!seen[3 * 7 + 3]);
    }

    #[test]
    fn empty_mask_gives_empty_skeleton() {
        let m = BinaryMask::new(5, 5);
        assert!(skeletonize(&m).is_empty());
    }
}
