//! Label-sorted equal shards, handed out from the fastest client down.

use ndarray::{s, Array2, Axis};

use crate::delay::{mean_delay, NodeProfile};
use crate::error::{Error, Result};
use crate::harness::idx::RawDataset;

#[derive(Clone, Debug, PartialEq)]
pub struct ClientShard {
    pub client: usize,
    pub features: Array2<f64>,
    pub labels: Array2<f64>,
    pub profile: NodeProfile,
}

/// Stable-sorts the data by class, cuts it into `profiles.len()` equal
/// contiguous shards, and gives shard `i` to the client with the `i`-th
/// smallest mean delay at `local_batch` points (ties by client id).
/// Shards are returned in client id order.
pub fn partition_noniid(
    data: &RawDataset,
    profiles: &[NodeProfile],
    local_batch: usize,
) -> Result<Vec<ClientShard>> {
    let n = profiles.len();
    if n == 0 || !data.len().is_multiple_of(n) {
        return Err(Error::Setup(format!(
            "{} training rows cannot be split into {n} equal shards",
            data.len()
        )));
    }
    let classes = data.classes();
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.sort_by_key(|&i| classes[i]);
    let features = data.features.select(Axis(0), &order);
    let labels = data.labels.select(Axis(0), &order);

    let mut by_speed: Vec<usize> = (0..n).collect();
    by_speed.sort_by(|&a, &b| {
        mean_delay(&profiles[a], local_batch as f64)
            .total_cmp(&mean_delay(&profiles[b], local_batch as f64))
            .then(a.cmp(&b))
    });

    let size = data.len() / n;
    let mut shards: Vec<Option<ClientShard>> = vec![None; n];
    for (rank, &client) in by_speed.iter().enumerate() {
        let rows = s![rank * size..(rank + 1) * size, ..];
        shards[client] = Some(ClientShard {
            client,
            features: features.slice(rows).to_owned(),
            labels: labels.slice(rows).to_owned(),
            profile: profiles[client],
        });
    }
    Ok(shards.into_iter().map(|s| s.expect("every client ranked")).collect())
}
