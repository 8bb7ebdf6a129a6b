# Room acoustics, pose trajectories and scene rendering.
