use crate::error::{contract, Result};

/// Pearson correlation (absent for a constant series), RMSE and absolute
/// mean forecast error of one prediction/truth pair.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricTriple {
    pub pcc: Option<f64>,
    pub rmse: f64,
    pub mfe: f64,
}

fn check(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(contract(format!(
            "metric inputs differ in length: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Err(contract("metric inputs are empty"));
    }
    Ok(())
}

fn is_constant(v: &[f64]) -> bool {
    v.iter().all(|x| *x == v[0])
}

/// Sample Pearson correlation; `None` when either series is constant.
pub fn pcc(a: &[f64], b: &[f64]) -> Result<Option<f64>> {
    check(a, b)?;
    if is_constant(a) || is_constant(b) {
        return Ok(None);
    }
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Ok(None);
    }
    Ok(Some((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0)))
}

pub fn rmse(a: &[f64], b: &[f64]) -> Result<f64> {
    check(a, b)?;
    Ok((a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64).sqrt())
}

/// `|mean(a − b)|`.
pub fn mfe(a: &[f64], b: &[f64]) -> Result<f64> {
    check(a, b)?;
    Ok((a.iter().zip(b).map(|(x, y)| x - y).sum::<f64>() / a.len() as f64).abs())
}

pub fn metrics(predicted: &[f64], actual: &[f64]) -> Result<MetricTriple> {
    Ok(MetricTriple {
        pcc: pcc(predicted, actual)?,
        rmse: rmse(predicted, actual)?,
        mfe: mfe(predicted, actual)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_examples() {
        let a = [1.0, 2.0, 3.0];
        assert_eq!(
            metrics(&a, &a).unwrap(),
            MetricTriple {
                pcc: Some(1.0),
                rmse: 0.0,
                mfe: 0.0
            }
        );
        assert_eq!(pcc(&a, &[3.0, 2.0, 1.0]).unwrap(), Some(-1.0));
        let m = metrics(&a, &[1.0, 1.0, 1.0]).unwrap();
        assert_eq!(m.pcc, None);
        assert!((m.rmse - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(m.mfe, 1.0);
    }

    #[test]
    fn contract_errors() {
        assert!(rmse(&[1.0], &[1.0, 2.0]).is_err());
        assert!(mfe(&[], &[]).is_err());
        assert!(pcc(&[1.0, 2.0], &[1.0]).is_err());
    }
}
