//! One simulated training episode: ground truth, schedule and observations,
//! all derived from a single seed.

use faer::Mat;

use crate::channel::{
    sample_channel, sample_multipath_channel, CascadedChannel, ChannelRealization, GainModel, SystemDims,
};
use crate::error::Result;
use crate::random::{rng_for, Stream};
use crate::signal::{
    dft_phase_schedule, downlink_observe, random_phase_schedule, uplink_observe, DownlinkObservations,
    PilotSchedule, ScheduleKind, UplinkObservations, UplinkSchedule,
};
use crate::C64;

#[derive(Debug, Clone)]
pub struct DownlinkScenario {
    pub channel: ChannelRealization,
    /// Cascade of the first path with its factors.
    pub cascade: CascadedChannel,
    /// Full cascaded channel `diag(h_r^H) G` (equal to `cascade.h_e` for one path).
    pub h_e: Mat<C64>,
    pub schedule: PilotSchedule,
    pub obs: DownlinkObservations,
}

impl DownlinkScenario {
    /// Single-path channel, `dims.k_pilots` slots.
    pub fn sample(dims: &SystemDims, kind: ScheduleKind, noise_var: f64, seed: u64) -> Result<Self> {
        Self::sample_with(dims, 1, &GainModel::default(), kind, noise_var, seed)
    }

    pub fn sample_with(
        dims: &SystemDims,
        n_paths: usize,
        gain_model: &GainModel,
        kind: ScheduleKind,
        noise_var: f64,
        seed: u64,
    ) -> Result<Self> {
        let channel = sample_multipath_channel(dims, n_paths, gain_model, &mut rng_for(seed, Stream::Channel))?;
        let schedule = PilotSchedule::generate(
            dims.n_bs,
            dims.m_ris,
            dims.k_pilots,
            kind,
            &mut rng_for(seed, Stream::Schedule),
        )?;
        Self::observe(channel, schedule, noise_var, seed)
    }

    /// Observes a given channel through a given schedule.
    pub fn observe(
        channel: ChannelRealization,
        schedule: PilotSchedule,
        noise_var: f64,
        seed: u64,
    ) -> Result<Self> {
        let cascade = channel.downlink_cascade();
        let h_e = crate::channel::cascaded_downlink(&channel.h_r, channel.g_matrix.as_ref())?;
        let obs = downlink_observe(h_e.as_ref(), &schedule, noise_var, &mut rng_for(seed, Stream::Noise))?;
        Ok(Self {
            channel,
            cascade,
            h_e,
            schedule,
            obs,
        })
    }
}

#[derive(Debug, Clone)]
pub struct UplinkScenario {
    pub channel: ChannelRealization,
    /// One uplink cascade per user.
    pub cascades: Vec<CascadedChannel>,
    pub schedule: UplinkSchedule,
    pub obs: UplinkObservations,
}

impl UplinkScenario {
    /// Single-path channel with `dims.q_users` users, DFT user pilots and the
    /// requested RIS phase design over `dims.k_pilots` blocks.
    pub fn sample(dims: &SystemDims, kind: ScheduleKind, noise_var: f64, seed: u64) -> Result<Self> {
        Self::sample_with(dims, &GainModel::default(), kind, noise_var, seed)
    }

    pub fn sample_with(
        dims: &SystemDims,
        gain_model: &GainModel,
        kind: ScheduleKind,
        noise_var: f64,
        seed: u64,
    ) -> Result<Self> {
        dims.validate_uplink()?;
        let channel = sample_channel(dims, gain_model, &mut rng_for(seed, Stream::Channel))?;
        let theta = match kind {
            ScheduleKind::Random => {
                random_phase_schedule(dims.m_ris, dims.k_pilots, &mut rng_for(seed, Stream::Schedule))
            }
            ScheduleKind::Dft => dft_phase_schedule(dims.m_ris, dims.k_pilots)?,
        };
        let schedule = UplinkSchedule::with_dft_pilots(theta, dims.q_users, dims.t_symbols)?;
        let g = channel.uplink_g();
        let obs = uplink_observe(
            g.as_ref(),
            &channel.h_users,
            &schedule,
            noise_var,
            &mut rng_for(seed, Stream::Noise),
        )?;
        let cascades = (0..dims.q_users)
            .map(|q| channel.uplink_cascade(q))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            channel,
            cascades,
            schedule,
            obs,
        })
    }
}
