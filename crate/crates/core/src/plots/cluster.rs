/// Leaf order of an average-linkage, Euclidean hierarchical clustering of
/// `rows`. Children are visited in the order the merge step lists them.
pub fn leaf_order(rows: &[Vec<f64>]) -> Vec<usize> {
    let n = rows.len();
    if n <= 2 {
        return (0..n).collect();
    }
    let mut condensed = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n - 1 {
        for j in i + 1..n {
            let d2: f64 = rows[i]
                .iter()
                .zip(&rows[j])
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            condensed.push(d2.sqrt());
        }
    }
    let dendrogram = kodama::linkage(&mut condensed, n, kodama::Method::Average);
    let children: Vec<(usize, usize)> = dendrogram
        .steps()
        .iter()
        .map(|s| (s.cluster1, s.cluster2))
        .collect();

    let mut order = Vec::with_capacity(n);
    let mut stack = vec![n + children.len() - 1];
    while let Some(id) = stack.pop() {
        if id < n {
            order.push(id);
        } else {
            let (a, b) = children[id - n];
            stack.push(b);
            stack.push(a);
        }
    }
    order
}
