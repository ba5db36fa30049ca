use serde::{Deserialize, Serialize};

/// One user's power and rate allocation for a frame.
///
/// Powers are per stream; rates are per stream group (common / private).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct UserAction {
    pub p_c: Vec<f64>,
    pub p_p: Vec<f64>,
    pub r_c: f64,
    pub r_p: f64,
}

impl UserAction {
    pub fn zeros(d_c: usize, d_p: usize) -> Self {
        Self {
            p_c: vec![0.0; d_c],
            p_p: vec![0.0; d_p],
            r_c: 0.0,
            r_p: 0.0,
        }
    }

    pub fn is_nonnegative(&self) -> bool {
        self.p_c.iter().chain(&self.p_p).all(|&p| p >= 0.0) && self.r_c >= 0.0 && self.r_p >= 0.0
    }

    /// Number of scalar components (powers then rates).
    pub fn dim(&self) -> usize {
        self.p_c.len() + self.p_p.len() + 2
    }

    pub fn component(&self, c: ActionComponent) -> f64 {
        match c {
            ActionComponent::CommonPower(i) => self.p_c[i],
            ActionComponent::PrivatePower(i) => self.p_p[i],
            ActionComponent::CommonRate => self.r_c,
            ActionComponent::PrivateRate => self.r_p,
        }
    }

    pub fn component_mut(&mut self, c: ActionComponent) -> &mut f64 {
        match c {
            ActionComponent::CommonPower(i) => &mut self.p_c[i],
            ActionComponent::PrivatePower(i) => &mut self.p_p[i],
            ActionComponent::CommonRate => &mut self.r_c,
            ActionComponent::PrivateRate => &mut self.r_p,
        }
    }

    pub fn components(&self) -> Vec<ActionComponent> {
        let mut out = Vec::with_capacity(self.dim());
        out.extend((0..self.p_c.len()).map(ActionComponent::CommonPower));
        out.extend((0..self.p_p.len()).map(ActionComponent::PrivatePower));
        out.push(ActionComponent::CommonRate);
        out.push(ActionComponent::PrivateRate);
        out
    }
}

/// Addresses one scalar of a [`UserAction`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ActionComponent {
    CommonPower(usize),
    PrivatePower(usize),
    CommonRate,
    PrivateRate,
}

/// Joint action of all users.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ControlAction {
    pub users: Vec<UserAction>,
}

impl ControlAction {
    pub fn zeros(d_c: &[usize], d_p: &[usize]) -> Self {
        Self {
            users: d_c
                .iter()
                .zip(d_p)
                .map(|(&c, &p)| UserAction::zeros(c, p))
                .collect(),
        }
    }

    pub fn is_nonnegative(&self) -> bool {
        self.users.iter().all(UserAction::is_nonnegative)
    }
}
