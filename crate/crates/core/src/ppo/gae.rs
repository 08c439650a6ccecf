use crate::num::Real;

/// Generalized advantage estimation over a `steps x envs` rollout.
///
/// `dones[t]` marks that the transition at `t` ended its episode, so neither
/// the next value nor later advantages leak across it. Returns
/// `(advantages, returns)` with `returns = advantages + values`.
pub fn compute_gae<T: Real>(
    rewards: &[T],
    values: &[T],
    dones: &[bool],
    last_values: &[T],
    num_envs: usize,
    gamma: f64,
    lambda: f64,
) -> (Vec<T>, Vec<T>) {
    let n = rewards.len();
    assert_eq!(values.len(), n);
    assert_eq!(dones.len(), n);
    assert_eq!(last_values.len(), num_envs);
    let steps = n / num_envs;
    let g = T::lit(gamma);
    let gl = T::lit(gamma * lambda);
    let mut adv = vec![T::zero(); n];
    let mut running = vec![T::zero(); num_envs];
    for t in (0..steps).rev() {
        for e in 0..num_envs {
            let i = t * num_envs + e;
            let next_v = if t + 1 == steps { last_values[e] } else { values[i + num_envs] };
            let not_done = if dones[i] { T::zero() } else { T::one() };
            let delta = rewards[i] + g * next_v * not_done - values[i];
            running[e] = delta + gl * not_done * running[e];
            adv[i] = running[e];
        }
    }
    let ret = adv.iter().zip(values).map(|(&a, &v)| a + v).collect();
    (adv, ret)
}

/// Shifts and scales to zero mean and unit (population) standard deviation.
pub fn normalize_advantages<T: Real>(adv: &mut [T]) {
    let n = adv.len();
    if n < 2 {
        return;
    }
    let mean = adv.iter().map(|a| a.to_f64_lossy()).sum::<f64>() / n as f64;
    let var = adv.iter().map(|a| (a.to_f64_lossy() - mean).powi(2)).sum::<f64>() / n as f64;
    let std = var.sqrt().max(1e-8);
    for a in adv.iter_mut() {
        *a = T::lit((a.to_f64_lossy() - mean) / std);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_terminal_step() {
        let (a, r) = compute_gae(&[1.0f64], &[0.0], &[true], &[5.0], 1, 0.99, 0.95);
        assert_eq!(a, vec![1.0]);
        assert_eq!(r, vec![1.0]);
    }

    #[test]
    fn lambda_zero_is_one_step_td() {
        let rewards = [0.5f64, -0.2, 1.0];
        let values = [0.1f64, 0.3, -0.4];
        let (a, _) = compute_gae(&rewards, &values, &[false, false, false], &[0.7], 1, 0.9, 0.0);
        let want = [0.5 + 0.9 * 0.3 - 0.1, -0.2 + 0.9 * -0.4 - 0.3, 1.0 + 0.9 * 0.7 + 0.4];
        for (x, y) in a.iter().zip(&want) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn normalized_moments() {
        let mut a: Vec<f64> = (0..100).map(|i| (i as f64 * 0.37).sin() * 3.0 + 1.0).collect();
        normalize_advantages(&mut a);
        let m = a.iter().sum::<f64>() / 100.0;
        let s = (a.iter().map(|x| (x - m).powi(2)).sum::<f64>() / 100.0).sqrt();
        assert!(m.abs() < 1e-6 && (s - 1.0).abs() < 1e-6);
    }
}
