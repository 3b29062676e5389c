/// Structural classification of a first-order chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ergodicity {
    Ergodic,
    Reducible,
    Periodic(usize),
}

/// Irreducibility via reachability on the positive-entry graph; the period is
/// the gcd of `level(u) + 1 − level(v)` over all edges, with BFS levels from
/// state 0.
pub fn check_ergodic(p: &[Vec<f64>]) -> Ergodicity {
    let n = p.len();
    let forward = reach(n, |u, v| p[u][v] > 0.0);
    let backward = reach(n, |u, v| p[v][u] > 0.0);
    if forward.iter().chain(&backward).any(Option::is_none) {
        return Ergodicity::Reducible;
    }
    let mut g = 0usize;
    for u in 0..n {
        for v in 0..n {
            if p[u][v] > 0.0 {
                let lu = forward[u].unwrap() as i64;
                let lv = forward[v].unwrap() as i64;
                g = gcd(g, (lu + 1 - lv).unsigned_abs() as usize);
            }
        }
    }
    if g == 1 {
        Ergodicity::Ergodic
    } else {
        Ergodicity::Periodic(g)
    }
}

fn reach(n: usize, edge: impl Fn(usize, usize) -> bool) -> Vec<Option<usize>> {
    let mut level = vec![None; n];
    let mut queue = std::collections::VecDeque::new();
    level[0] = Some(0);
    queue.push_back(0);
    while let Some(u) = queue.pop_front() {
        for v in 0..n {
            if level[v].is_none() && edge(u, v) {
                level[v] = Some(level[u].unwrap() + 1);
                queue.push_back(v);
            }
        }
    }
    level
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}
