//! CSV trajectory files: header `t,u0,..,y0,..`, one row per sample.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use gamma_ddpc::closed_loop::ClosedLoopRun;
use gamma_ddpc::ddpc::References;
use gamma_ddpc::trajectory::Trajectory;
use nalgebra::DMatrix;

fn header(prefix: &str, n: usize) -> impl Iterator<Item = String> + '_ {
    (0..n).map(move |i| format!("{prefix}{i}"))
}

pub fn write_trajectory<W: Write>(out: W, traj: &Trajectory) -> Result<()> {
    let (m, p) = (traj.input_dim(), traj.output_dim());
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    let mut head = vec!["t".to_string()];
    head.extend(header("u", m));
    head.extend(header("y", p));
    w.write_record(&head)?;
    for t in 0..traj.len() {
        let mut row = vec![t.to_string()];
        row.extend(traj.inputs().column(t).iter().map(|v| v.to_string()));
        row.extend(traj.outputs().column(t).iter().map(|v| v.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_trajectory(path: &Path, traj: &Trajectory) -> Result<()> {
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    write_trajectory(f, traj)
}

pub fn read_trajectory<R: Read>(input: R) -> Result<Trajectory> {
    let mut r = csv::Reader::from_reader(input);
    let head = r.headers()?.clone();
    if head.get(0) != Some("t") {
        bail!("trajectory file must start with a `t` column");
    }
    let m = head.iter().filter(|h| h.starts_with('u')).count();
    let p = head.iter().filter(|h| h.starts_with('y')).count();
    if m == 0 || p == 0 || head.len() != 1 + m + p {
        bail!("expected columns t,u0..,y0..; found {:?}", head.iter().collect::<Vec<_>>());
    }
    let mut u = Vec::new();
    let mut y = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let vals: Vec<f64> = rec
            .iter()
            .skip(1)
            .map(|s| s.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .with_context(|| format!("row {}", line + 2))?;
        if vals.len() != m + p {
            bail!("row {} has {} values, expected {}", line + 2, vals.len(), m + p);
        }
        u.extend_from_slice(&vals[..m]);
        y.extend_from_slice(&vals[m..]);
    }
    let n = u.len() / m;
    Ok(Trajectory::new(
        DMatrix::from_column_slice(m, n, &u),
        DMatrix::from_column_slice(p, n, &y),
    )?)
}

pub fn load_trajectory(path: &Path) -> Result<Trajectory> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    read_trajectory(f)
}

/// Closed-loop record: inputs, clean and measured outputs and references.
pub fn save_run(path: &Path, run: &ClosedLoopRun, refs: &References) -> Result<()> {
    let (m, p) = (run.inputs.nrows(), run.outputs.nrows());
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(f);
    let mut head = vec!["t".to_string()];
    head.extend(header("u", m));
    head.extend(header("y", p));
    head.extend(header("y_meas", p));
    head.extend(header("u_ref", m));
    head.extend(header("y_ref", p));
    w.write_record(&head)?;
    for t in 0..run.inputs.ncols() {
        let mut row = vec![t.to_string()];
        row.extend(run.inputs.column(t).iter().map(|v| v.to_string()));
        row.extend(run.outputs.column(t).iter().map(|v| v.to_string()));
        row.extend(run.measured.column(t).iter().map(|v| v.to_string()));
        row.extend(refs.u_at(t as isize).iter().map(|v| v.to_string()));
        row.extend(refs.y_at(t as isize).iter().map(|v| v.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trajectory_round_trip_is_exact() {
        let u = DMatrix::from_fn(2, 7, |i, t| (i as f64 + 1.0) * 0.1 * t as f64 - 1.0 / 3.0);
        let y = DMatrix::from_fn(1, 7, |_, t| (t as f64).sin() * 1e-7);
        let traj = Trajectory::new(u, y).unwrap();
        let mut buf = Vec::new();
        write_trajectory(&mut buf, &traj).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("t,u0,u1,y0\n"));
        assert!(!text.contains('\r'));
        let back = read_trajectory(buf.as_slice()).unwrap();
        assert_eq!(back.inputs(), traj.inputs());
        assert_eq!(back.outputs(), traj.outputs());
    }

    #[test]
    fn malformed_files_are_rejected() {
        assert!(read_trajectory("x,u0,y0\n0,1,2\n".as_bytes()).is_err());
        assert!(read_trajectory("t,u0,y0\n0,1\n".as_bytes()).is_err());
        assert!(read_trajectory("t,u0,y0\n0,1,abc\n".as_bytes()).is_err());
    }
}
