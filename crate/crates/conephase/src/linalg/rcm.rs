//! Reverse Cuthill-McKee node ordering to minimize matrix bandwidth.

use super::sparse::SparsityPattern;

/// Returns `perm` with `perm[old] = new`, computed by BFS from a
/// pseudo-peripheral start node with neighbors visited in degree order,
/// then reversed.
pub fn reverse_cuthill_mckee(pattern: &SparsityPattern) -> Vec<usize> {
    let n = pattern.n;
    if n == 0 {
        return Vec::new();
    }
    let neighbors = |i: usize| &pattern.col_idx[pattern.row_ptr[i]..pattern.row_ptr[i + 1]];
    let degree = |i: usize| pattern.row_ptr[i + 1] - pattern.row_ptr[i];

    // pseudo-peripheral start: BFS twice from a minimum-degree node
    let mut start = (0..n).min_by_key(|&i| degree(i)).unwrap();
    for _ in 0..2 {
        let levels = bfs_levels(n, start, neighbors);
        let far = levels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l != usize::MAX)
            .max_by_key(|(i, &l)| (l, std::cmp::Reverse(degree(*i))))
            .map(|(i, _)| i)
            .unwrap_or(start);
        if far == start {
            break;
        }
        start = far;
    }

    let mut order = Vec::with_capacity(n);
    let mut visited = vec![false; n];
    let mut queue = std::collections::VecDeque::new();
    // cover disconnected components too
    let mut seeds: Vec<usize> = (0..n).collect();
    seeds.sort_unstable_by_key(|&i| degree(i));
    let push = |i: usize, visited: &mut Vec<bool>, queue: &mut std::collections::VecDeque<usize>| {
        if !visited[i] {
            visited[i] = true;
            queue.push_back(i);
        }
    };
    push(start, &mut visited, &mut queue);
    let mut seed_pos = 0;
    while order.len() < n {
        while let Some(i) = queue.pop_front() {
            order.push(i);
            let mut nbrs: Vec<usize> = neighbors(i).iter().copied().filter(|&j| !visited[j]).collect();
            nbrs.sort_unstable_by_key(|&j| degree(j));
            for j in nbrs {
                push(j, &mut visited, &mut queue);
            }
        }
        while seed_pos < n && visited[seeds[seed_pos]] {
            seed_pos += 1;
        }
        if seed_pos < n {
            push(seeds[seed_pos], &mut visited, &mut queue);
        }
    }
    order.reverse();
    let mut perm = vec![0usize; n];
    for (new, &old) in order.iter().enumerate() {
        perm[old] = new;
    }
    perm
}

fn bfs_levels<'a>(
    n: usize,
    start: usize,
    neighbors: impl Fn(usize) -> &'a [usize],
) -> Vec<usize> {
    let mut lev = vec![usize::MAX; n];
    lev[start] = 0;
    let mut queue = std::collections::VecDeque::from([start]);
    while let Some(i) = queue.pop_front() {
        for &j in neighbors(i) {
            if lev[j] == usize::MAX {
                lev[j] = lev[i] + 1;
                queue.push_back(j);
            }
        }
    }
    lev
}
