use std::io::Write;

use super::model::{ModelError, SystemModel};

#[derive(Debug, thiserror::Error)]
pub enum CsvError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("{states} states for {controls} controls; expected one more state than control")]
    Length { states: usize, controls: usize },
}

/// CSV header: `t`, state names, control names, then `<name>` and `<name>_bound` per constraint.
pub fn trajectory_header(model: &dyn SystemModel) -> Vec<String> {
    let mut header = vec!["t".to_string()];
    header.extend(model.state_names());
    header.extend(model.control_names());
    for name in model.constraint_names() {
        header.push(format!("{name}_bound"));
        header.insert(header.len() - 1, name);
    }
    header
}

/// Writes one row per control step.
///
/// Row `i` holds `x_i`, `u_i` and the constraints of `x_{i+1}`, the state
/// reached while `u_i` was applied. `states` may be one longer than
/// `controls` or equal in length when the final successor is missing (a
/// truncated run); missing constraint cells are left empty.
pub fn write_trajectory_csv<W: Write>(
    writer: W,
    model: &dyn SystemModel,
    dt: f64,
    states: &[Vec<f64>],
    controls: &[Vec<f64>],
) -> Result<(), CsvError> {
    if states.len() != controls.len() + 1 && states.len() != controls.len() {
        return Err(CsvError::Length {
            states: states.len(),
            controls: controls.len(),
        });
    }
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(trajectory_header(model))?;
    let n_cons = model.constraint_count();
    for (i, u) in controls.iter().enumerate() {
        let mut row = vec![format!("{}", i as f64 * dt)];
        row.extend(states[i].iter().map(|v| v.to_string()));
        row.extend(u.iter().map(|v| v.to_string()));
        match states.get(i + 1) {
            Some(next) => {
                for c in model.constraints(next, u)? {
                    row.push(c.value.to_string());
                    row.push(c.bound.to_string());
                }
            }
            None => row.extend(std::iter::repeat(String::new()).take(2 * n_cons)),
        }
        w.write_record(&row)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}
