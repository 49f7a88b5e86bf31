//! Writers for the data artifacts: plot-ready CSV and snapshot files.
//!
//! Floats are printed with Rust's shortest round-trip formatting, so
//! identical runs produce byte-identical files.

use crate::error::{CoreError, Result};
use crate::modulation::DecompositionRecord;
use crate::pde::{DomainSpec, Field};
use crate::profiles::ProfileSet;
use crate::reduced::ReducedTrajectory;
use crate::shooting::ExitRecord;
use std::io::Write;

fn io_err(e: std::io::Error) -> CoreError {
    CoreError::InvalidGrid(format!("write failed: {e}"))
}

/// Trajectory CSV: s, lambda, x, b, g, f, F, G, H, t.
pub fn write_trajectory_csv(traj: &ReducedTrajectory, out: &mut impl Write) -> Result<()> {
    writeln!(out, "s,lambda,x,b,g,f,F,G,H,t").map_err(io_err)?;
    for ((st, c), t) in traj.states.iter().zip(&traj.coords).zip(&traj.t) {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            st.s, st.lambda, st.x, st.b, c.g, c.f, c.big_f, c.big_g, c.h, t
        )
        .map_err(io_err)?;
    }
    Ok(())
}

/// Profile CSV: y, Q, Y0, P, Qb (Q_b at the given drift parameter).
pub fn write_profiles_csv(profiles: &ProfileSet, b: f64, out: &mut impl Write) -> Result<()> {
    let qb = profiles.qb(b)?;
    writeln!(out, "y,Q,Y0,P,Qb").map_err(io_err)?;
    for (i, y) in profiles.grid.nodes().enumerate() {
        writeln!(
            out,
            "{},{},{},{},{}",
            y,
            profiles.q.values[i],
            profiles.y0.values[i],
            profiles.p.values[i],
            qb.values[i]
        )
        .map_err(io_err)?;
    }
    Ok(())
}

/// Exit-map CSV: lambda0, b0, s_star, F, G, angle, status.
pub fn write_exit_map_csv(records: &[ExitRecord], out: &mut impl Write) -> Result<()> {
    writeln!(out, "lambda0,b0,s_star,F,G,angle,status").map_err(io_err)?;
    for r in records {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.lambda0,
            r.b0,
            r.s_star,
            r.exit_f,
            r.exit_g,
            r.exit_angle,
            serde_plain(&r.status)
        )
        .map_err(io_err)?;
    }
    Ok(())
}

fn serde_plain(status: &crate::shooting::ExitStatus) -> &'static str {
    use crate::shooting::ExitStatus::*;
    match status {
        Exited => "exited",
        ImmediateExit => "immediate-exit",
        ReachedSMax => "reached-s-max",
        Truncated => "truncated",
    }
}

/// Decomposition log CSV:
/// t, s, lambda, x, b, p, N1, N2, N1loc, N2loc, F1, F2, ortho residuals.
pub fn write_decomposition_log_csv(
    records: &[DecompositionRecord],
    out: &mut impl Write,
) -> Result<()> {
    writeln!(
        out,
        "t,s,lambda,x,b,p,N1,N2,N1loc,N2loc,F1,F2,ortho_ylq,ortho_lq,ortho_q"
    )
    .map_err(io_err)?;
    for r in records {
        let st = &r.state;
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            st.t,
            st.s,
            st.lambda,
            st.x,
            st.b,
            st.p,
            r.norms.n1,
            r.norms.n2,
            r.norms.n1_loc,
            r.norms.n2_loc,
            r.f1,
            r.f2,
            r.ortho[0],
            r.ortho[1],
            r.ortho[2]
        )
        .map_err(io_err)?;
    }
    Ok(())
}

/// Snapshot CSV: one header line `t,x_min,x_max,n`, then one sample per
/// line.
pub fn write_field_csv(field: &Field, out: &mut impl Write) -> Result<()> {
    writeln!(
        out,
        "{},{},{},{}",
        field.t, field.domain.x_min, field.domain.x_max, field.domain.n
    )
    .map_err(io_err)?;
    for v in &field.values {
        writeln!(out, "{v}").map_err(io_err)?;
    }
    Ok(())
}

pub fn read_field_csv(text: &str) -> Result<Field> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| CoreError::InvalidGrid("empty snapshot file".into()))?;
    let parts: Vec<&str> = header.split(',').collect();
    if parts.len() != 4 {
        return Err(CoreError::InvalidGrid(format!(
            "snapshot header needs 4 fields, got {}",
            parts.len()
        )));
    }
    let parse = |s: &str| -> Result<f64> {
        s.trim()
            .parse()
            .map_err(|e| CoreError::InvalidGrid(format!("bad number {s:?}: {e}")))
    };
    let t = parse(parts[0])?;
    let x_min = parse(parts[1])?;
    let x_max = parse(parts[2])?;
    let n = parse(parts[3])? as usize;
    let values: Result<Vec<f64>> = lines.map(parse).collect();
    Field::new(t, DomainSpec::new(x_min, x_max, n)?, values?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pde::DomainSpec;

    #[test]
    fn field_csv_round_trip_is_exact() {
        let d = DomainSpec::new(-3.0, 5.0, 64).unwrap();
        let f = Field::from_fn(1.25, d, |x| (x * 0.7).sin() * 1e-7 + x);
        let mut buf = Vec::new();
        write_field_csv(&f, &mut buf).unwrap();
        let g = read_field_csv(std::str::from_utf8(&buf).unwrap()).unwrap();
        assert_eq!(f.t, g.t);
        assert_eq!(f.domain, g.domain);
        // Shortest round-trip formatting: bit-exact values.
        assert_eq!(f.values, g.values);
    }

    #[test]
    fn trajectory_csv_has_expected_shape() {
        let params = crate::reduced::params_from_beta(0.4, 3.450821807669628, 100.0).unwrap();
        let traj = crate::reduced::integrate(
            &crate::reduced::exact_solution(&params, 100.0),
            &params,
            200.0,
            1e-10,
            16,
        )
        .unwrap();
        let mut buf = Vec::new();
        write_trajectory_csv(&traj, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "s,lambda,x,b,g,f,F,G,H,t");
        assert_eq!(lines.len(), 17);
        assert_eq!(lines[1].split(',').count(), 10);
    }
}
