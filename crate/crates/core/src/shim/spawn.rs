//! How many executors each spawner launches.

/// Executors each node spawns under decentralized spawning.
///
/// With `n_e <= n_r` every node spawns one. Otherwise the `n_e` target is
/// divided over the `2f+1` nodes guaranteed to be honest and live, or over
/// `f+1` when honest nodes may be kept in the dark.
pub fn decentralized_share(n_e: usize, n_r: usize, f_r: usize, dark_pessimism: bool) -> usize {
    if n_e <= n_r {
        return 1;
    }
    let divisor = if dark_pessimism { f_r + 1 } else { 2 * f_r + 1 };
    n_e.div_ceil(divisor)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_target_spawns_one_each() {
        assert_eq!(decentralized_share(3, 4, 1, false), 1);
        assert_eq!(decentralized_share(4, 4, 1, true), 1);
    }

    #[test]
    fn seven_executors_over_four_nodes() {
        assert_eq!(decentralized_share(7, 4, 1, false), 3);
        assert_eq!(decentralized_share(7, 4, 1, true), 4);
    }
}
