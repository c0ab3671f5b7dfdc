pub mod compare;
pub mod evaluate;
pub mod infer;
pub mod phantom;
pub mod review;
pub mod train;

use std::str::FromStr;

/// `D,H,W` extents.
pub fn parse_extents(s: &str) -> std::result::Result<[usize; 3], String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    let bad = || format!("`{s}`: expected three comma-separated extents such as 32,32,16");
    if parts.len() != 3 {
        return Err(bad());
    }
    let mut out = [0; 3];
    for (o, p) in out.iter_mut().zip(parts) {
        *o = usize::from_str(p).map_err(|_| bad())?;
    }
    Ok(out)
}
