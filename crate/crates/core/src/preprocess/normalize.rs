use crate::tensor::{Scalar, Tensor};

/// Channels whose standard deviation falls below this are mapped to zeros.
pub const MIN_STD: f64 = 1e-8;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZScoreScope {
    /// Each channel of a window normalized by its own mean and std.
    #[default]
    PerChannel,
    /// One mean and std over the whole window.
    Window,
}

fn standardize<T: Scalar>(values: &mut [T]) {
    let n = values.len() as f64;
    let mean = values.iter().map(|v| v.to_f64_lossy()).sum::<f64>() / n;
    // population variance
    let var = values
        .iter()
        .map(|v| {
            let d = v.to_f64_lossy() - mean;
            d * d
        })
        .sum::<f64>()
        / n;
    let std = var.sqrt();
    if std < MIN_STD {
        values.iter_mut().for_each(|v| *v = T::zero());
    } else {
        values
            .iter_mut()
            .for_each(|v| *v = T::from_f64_lossy((v.to_f64_lossy() - mean) / std));
    }
}

/// Z-score of a `[channels, time]` window.
pub fn zscore<T: Scalar>(window: &Tensor<T>) -> Tensor<T> {
    zscore_with(window, ZScoreScope::PerChannel)
}

pub fn zscore_with<T: Scalar>(window: &Tensor<T>, scope: ZScoreScope) -> Tensor<T> {
    let mut out = window.clone();
    match scope {
        ZScoreScope::Window => standardize(out.data_mut()),
        ZScoreScope::PerChannel => {
            let t = *window.shape().last().expect("rank >= 1");
            out.data_mut().chunks_exact_mut(t).for_each(standardize);
        }
    }
    out
}
