use super::{Link, Network, Node, NodeIdx, SATURATION_FLOW_VPH};

/// Square `n × n` grid with bidirectional links between 4-neighbours.
///
/// Node `n{r}_{c}` sits at `(c·block, r·block)`. Corner nodes (two
/// neighbours) are not junctions; every other node is. The link count is
/// `2·2·n·(n−1)`.
pub fn grid_network(n: usize, block_m: f64, speed_mps: f64, lanes: u32, capacity_vph: Option<f64>) -> Network {
    let mut nodes = Vec::with_capacity(n * n);
    for r in 0..n {
        for c in 0..n {
            let degree = usize::from(r > 0) + usize::from(r + 1 < n) + usize::from(c > 0) + usize::from(c + 1 < n);
            nodes.push(Node {
                id: format!("n{r}_{c}"),
                x: c as f64 * block_m,
                y: r as f64 * block_m,
                is_junction: degree > 2,
            });
        }
    }
    let cap = capacity_vph.unwrap_or(f64::from(lanes) * SATURATION_FLOW_VPH);
    let mut links = Vec::new();
    let mut push = |a: usize, b: usize| {
        let id = format!("l{}", links.len());
        links.push(Link {
            id,
            from: NodeIdx(a),
            to: NodeIdx(b),
            length: block_m,
            speed_limit: speed_mps,
            lanes,
            capacity_vph: cap,
        });
    };
    for r in 0..n {
        for c in 0..n {
            let here = r * n + c;
            if c + 1 < n {
                push(here, here + 1);
                push(here + 1, here);
            }
            if r + 1 < n {
                push(here, here + n);
                push(here + n, here);
            }
        }
    }
    Network::new(nodes, links).expect("grid construction is consistent")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_counts_match_enumeration() {
        for n in 2..=8 {
            let net = grid_network(n, 100.0, 10.0, 1, None);
            // Enumerate ordered neighbour pairs directly.
            let mut pairs = 0;
            for r in 0..n as i64 {
                for c in 0..n as i64 {
                    for (dr, dc) in [(0, 1), (0, -1), (1, 0), (-1, 0)] {
                        let (rr, cc) = (r + dr, c + dc);
                        if rr >= 0 && cc >= 0 && rr < n as i64 && cc < n as i64 {
                            pairs += 1;
                        }
                    }
                }
            }
            assert_eq!(net.num_links(), pairs);
            assert_eq!(net.num_links(), 2 * 2 * n * (n - 1));
            assert_eq!(net.num_nodes(), n * n);
        }
        let net = grid_network(8, 100.0, 10.0, 1, None);
        assert_eq!((net.num_nodes(), net.num_links()), (64, 224));
    }

    #[test]
    fn default_capacity_is_lane_saturation_flow() {
        let net = grid_network(2, 100.0, 10.0, 2, None);
        assert_eq!(net.links()[0].capacity_vph, 3600.0);
        assert_eq!(net.links()[0].capacity_bound(3.0), 10800.0);
    }
}
