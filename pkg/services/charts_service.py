"""Service for rendering trajectory charts as standalone SVG documents."""
import logging
from pathlib import Path
from typing import Sequence, Tuple, Union

import matplotlib

matplotlib.use('Agg')
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from services.env_service import Trajectory  # noqa: E402
from services.eval_service import TrackRecord, to_track_records  # noqa: E402

logger = logging.getLogger(__name__)

CODE_PALETTE = ['#1f77b4', '#d62728', '#2ca02c', '#ff7f0e', '#9467bd', '#8c564b', '#e377c2', '#17becf']
UNCODED_COLOR = '#7f7f7f'
FIGSIZE = (6.4, 6.4)
SVG_RC = {
    'svg.hashsalt': 'infogail-2d',
    'svg.fonttype': 'path',
    'font.family': 'DejaVu Sans',
    'axes.unicode_minus': False,
}


class ChartsService:
    @staticmethod
    def color_for(code_index: int) -> str:
        if code_index < 0:
            return UNCODED_COLOR
        return CODE_PALETTE[code_index % len(CODE_PALETTE)]

    @staticmethod
    def bounds(tracks: Sequence[TrackRecord]) -> Tuple[float, float, float, float]:
        """Square data bounds around every point with a 10% margin on each side."""
        points = [t.points for t in tracks if len(t.points)]
        if not points:
            return -1.0, 1.0, -1.0, 1.0
        stacked = np.vstack(points)
        x_min, y_min = stacked.min(axis=0)
        x_max, y_max = stacked.max(axis=0)
        span = max(x_max - x_min, y_max - y_min, 1e-9)
        cx, cy = (x_min + x_max) / 2.0, (y_min + y_max) / 2.0
        half = span / 2.0 + 0.1 * span
        return cx - half, cx + half, cy - half, cy + half

    @staticmethod
    def render_svg(trajs: Sequence[Union[Trajectory, TrackRecord]], path: Union[str, Path]) -> Path:
        """One line per trajectory colored by code index, written as a byte-stable SVG."""
        path = Path(path)
        tracks = [t if isinstance(t, TrackRecord) else to_track_records([t])[0] for t in trajs]
        x_min, x_max, y_min, y_max = ChartsService.bounds(tracks)

        with matplotlib.rc_context(SVG_RC):
            fig, ax = plt.subplots(figsize=FIGSIZE)
            try:
                labelled = set()
                for track in tracks:
                    label = None
                    if track.code_index not in labelled:
                        labelled.add(track.code_index)
                        label = 'no code' if track.code_index < 0 else f'code {track.code_index}'
                    points = np.asarray(track.points, dtype=np.float64).reshape(-1, 2)
                    ax.plot(points[:, 0], points[:, 1], color=ChartsService.color_for(track.code_index),
                            linewidth=1.5, alpha=0.8, label=label, gid=f'traj-{track.traj_id}')
                ax.axhline(0.0, color='#333333', linewidth=0.5, linestyle='--')
                ax.axvline(0.0, color='#333333', linewidth=0.5, linestyle='--')
                ax.set_xlim(x_min, x_max)
                ax.set_ylim(y_min, y_max)
                ax.set_aspect('equal')
                ax.set_xlabel('x')
                ax.set_ylabel('y')
                if labelled:
                    ax.legend(loc='upper right', fontsize=8)
                fig.savefig(path, format='svg', metadata={'Date': None})
            finally:
                plt.close(fig)
        logger.info(f"Rendered {len(tracks)} trajectories to {path}")
        return path
