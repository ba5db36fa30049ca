//! Versioned plain-text checkpoint of a [`LearnerState`].

use std::fmt::Write as _;
use std::path::Path;

use super::{ActionTable, LearnerState, Multipliers, PotentialTable, QueueGrid};
use crate::action::UserAction;
use crate::error::{Error, Result};

const HEADER: &str = "pcomimo-learner 1";

fn join(v: &[f64]) -> String {
    v.iter()
        .map(|x| format!("{x:e}"))
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn write_snapshot(path: &Path, state: &LearnerState) -> Result<()> {
    let mut s = String::new();
    let t = &state.tables;
    let users = t.users();
    let g = t.grid();
    let (entries, visits) = state.actions.raw();
    writeln!(s, "{HEADER}").unwrap();
    writeln!(s, "frame {}", state.frame).unwrap();
    writeln!(s, "grid {} {:e}", g.levels(), g.max()).unwrap();
    writeln!(s, "users {users}").unwrap();
    for k in 0..users {
        writeln!(s, "potential {}", join(t.values(k))).unwrap();
    }
    let m = &state.multipliers;
    writeln!(s, "bound {:e}", m.bound).unwrap();
    writeln!(s, "gamma_p {}", join(&m.gamma_p)).unwrap();
    writeln!(s, "gamma_c {}", join(&m.gamma_c)).unwrap();
    writeln!(
        s,
        "actions {} {}",
        state.actions.queue_cells(),
        state.actions.csit_buckets()
    )
    .unwrap();
    for k in 0..users {
        for (b, e) in entries[k].iter().enumerate() {
            if let Some(a) = e {
                writeln!(
                    s,
                    "entry {k} {b} {} | {} | {} | {:e} {:e}",
                    visits[k][b],
                    join(&a.p_c),
                    join(&a.p_p),
                    a.r_c,
                    a.r_p
                )
                .unwrap();
            }
        }
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Config(format!("malformed learner snapshot: {}", msg.into()))
}

fn floats(s: &str) -> Result<Vec<f64>> {
    s.split_whitespace()
        .map(|x| {
            x.parse::<f64>()
                .map_err(|_| bad(format!("bad number {x:?}")))
        })
        .collect()
}

pub fn read_snapshot(path: &Path) -> Result<LearnerState> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    if lines.next() != Some(HEADER) {
        return Err(bad("unknown header"));
    }
    let mut field = |name: &str| -> Result<String> {
        let line = lines.next().ok_or_else(|| bad(format!("missing {name}")))?;
        line.strip_prefix(name)
            .map(|r| r.trim().to_string())
            .ok_or_else(|| bad(format!("expected {name}, got {line:?}")))
    };
    let frame: u64 = field("frame")?.parse().map_err(|_| bad("frame"))?;
    let grid = floats(&field("grid")?)?;
    if grid.len() != 2 {
        return Err(bad("grid"));
    }
    let grid = QueueGrid::new(grid[0] as usize, grid[1])?;
    let users: usize = field("users")?.parse().map_err(|_| bad("users"))?;
    let values = (0..users)
        .map(|_| floats(&field("potential")?))
        .collect::<Result<Vec<_>>>()?;
    let tables = PotentialTable::from_values(grid, values)?;
    let bound = floats(&field("bound")?)?[0];
    let multipliers = Multipliers {
        gamma_p: floats(&field("gamma_p")?)?,
        gamma_c: floats(&field("gamma_c")?)?,
        bound,
    };
    let shape: Vec<usize> = field("actions")?
        .split_whitespace()
        .map(|x| x.parse().map_err(|_| bad("actions")))
        .collect::<Result<_>>()?;
    let (cells, buckets) = (shape[0], shape[1]);
    let mut entries = vec![vec![None; cells * buckets]; users];
    let mut visits = vec![vec![0u64; cells * buckets]; users];
    for line in lines {
        let rest = line
            .strip_prefix("entry ")
            .ok_or_else(|| bad(format!("unexpected {line:?}")))?;
        let parts: Vec<&str> = rest.split('|').collect();
        if parts.len() != 4 {
            return Err(bad("entry"));
        }
        let head: Vec<u64> = parts[0]
            .split_whitespace()
            .map(|x| x.parse().map_err(|_| bad("entry index")))
            .collect::<Result<_>>()?;
        let rates = floats(parts[3])?;
        let (k, b) = (head[0] as usize, head[1] as usize);
        visits[k][b] = head[2];
        entries[k][b] = Some(UserAction {
            p_c: floats(parts[1])?,
            p_p: floats(parts[2])?,
            r_c: rates[0],
            r_p: rates[1],
        });
    }
    Ok(LearnerState {
        tables,
        multipliers,
        actions: ActionTable::from_raw(cells, buckets, entries, visits),
        frame,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let grid = QueueGrid::new(4, 3.0).unwrap();
        let tables =
            PotentialTable::from_values(grid, vec![vec![0.0, 1.5, 2.25, 1e-17], vec![0.0; 4]])
                .unwrap();
        let mut actions = ActionTable::new(2, 4, 2);
        *actions.entry(1, 5, || UserAction::zeros(1, 1)) = UserAction {
            p_c: vec![0.1],
            p_p: vec![2.0 / 3.0],
            r_c: 1.0,
            r_p: 0.0,
        };
        actions.visit(1, 5);
        let state = LearnerState {
            tables,
            multipliers: Multipliers {
                gamma_p: vec![0.01, 0.2],
                gamma_c: vec![0.0, 1.0 / 3.0],
                bound: 1e3,
            },
            actions,
            frame: 42,
        };
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.txt");
        write_snapshot(&p, &state).unwrap();
        assert_eq!(read_snapshot(&p).unwrap(), state);
    }

    #[test]
    fn rejects_foreign_files() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.txt");
        std::fs::write(&p, "hello\n").unwrap();
        assert!(matches!(read_snapshot(&p), Err(Error::Config(_))));
    }
}
