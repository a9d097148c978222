import logging
from typing import Callable, Dict, List, Optional

from utils.identifiability_core import IdentifiabilityReport, Label, classify_progressive
from utils.model_parser import Model

logger = logging.getLogger(__name__)

PHASE_STATUS = {
    'local': "🔎 Local phase",
    'specialize': "🎲 Specializing output jets",
    'groebner': "⚙️ Groebner basis",
}


class ProgressiveAnalyzer:
    """Runs the classification pipeline and fans its updates out to callbacks"""

    def __init__(self, probability=None, seed=0, max_order: Optional[int] = None, jobs: int = 1):
        self.probability = probability
        self.seed = seed
        self.max_order = max_order
        self.jobs = jobs
        self.progress_callbacks: List[Callable[[int, int, str], None]] = []

    def add_progress_callback(self, callback: Callable[[int, int, str], None]):
        """Add a callback for progress updates: callback(current, total, status)"""
        self.progress_callbacks.append(callback)

    def _notify_progress(self, current: int, total: int, status: str):
        for callback in self.progress_callbacks:
            try:
                callback(current, total, status)
            except Exception as e:
                logger.warning(f"Progress callback error: {e}")

    def updates(self, m: Model):
        """Yield the pipeline's update dicts, notifying callbacks on the way."""
        for update in classify_progressive(
            m, self.probability, self.seed, max_order=self.max_order, jobs=self.jobs
        ):
            if update['type'] == 'progress':
                self._notify_progress(update['current'], update['total'], update['status'])
            elif update['type'] == 'phase':
                self._notify_progress(0, 1, update['status'])
            yield update

    def run(self, m: Model) -> IdentifiabilityReport:
        report = None
        for update in self.updates(m):
            if update['type'] == 'complete':
                report = update['report']
        return report


class StreamingAnalyzer:
    """Streaming analysis with live updates displayed in Streamlit"""

    def __init__(self, probability=None, seed=0, max_order: Optional[int] = None, jobs: int = 1):
        self.analyzer = ProgressiveAnalyzer(probability, seed, max_order, jobs)

    def analyze_with_streaming_updates(self, m: Model, streamlit_container=None) -> Optional[IdentifiabilityReport]:
        """
        Analyze a model with progress shown in ``streamlit_container``.
        Returns the report, or None if the analysis failed.
        """
        import streamlit as st

        progress_bar = None
        status_text = None
        live_labels = None

        if streamlit_container:
            with streamlit_container:
                progress_bar = st.progress(0)
                status_text = st.empty()
                live_labels = st.expander("🔄 Live labels", expanded=False)

        try:
            for update in self.analyzer.updates(m):
                if update['type'] == 'phase':
                    if status_text:
                        status_text.info(f"{PHASE_STATUS.get(update['phase'], update['phase'])}: {update['status']}")

                elif update['type'] == 'local_complete':
                    if status_text:
                        flags = update['flags']
                        local = sum(1 for flag in flags.values() if flag)
                        status_text.success(f"✅ Local phase: {local}/{len(flags)} unknowns locally identifiable "
                                            f"(rank {update['rank']}, {update['processing_time']:.1f}s)")
                    if progress_bar:
                        progress_bar.progress(0.3)

                elif update['type'] == 'progress':
                    if progress_bar:
                        progress_bar.progress(0.3 + 0.7 * update['current'] / update['total'])
                    if live_labels:
                        with live_labels:
                            st.write(f"**{update['unknown']}**: {update['label'].value}")

                elif update['type'] == 'complete':
                    if progress_bar:
                        progress_bar.progress(1.0)
                    if status_text:
                        report = update['report']
                        status_text.success(f"✅ Complete in {update['processing_time']:.1f}s: "
                                            f"{len(report.unknowns_with(Label.GLOBAL))} global, "
                                            f"{len(report.unknowns_with(Label.LOCAL))} local, "
                                            f"{len(report.unknowns_with(Label.NONE))} not identifiable")
                    return update['report']

        except Exception as e:
            logger.error(f"Streaming analysis error: {e}")
            if status_text:
                status_text.error(f"❌ Error: {str(e)}")
        return None


# Utility function for integration
def analyze_with_progress(m: Model, probability=None, seed=0,
                          progress_callback: Optional[Callable] = None, **options) -> IdentifiabilityReport:
    """
    Analyze a model with an optional progress callback
    Callback signature: callback(current: int, total: int, status: str)
    """
    analyzer = ProgressiveAnalyzer(probability, seed, **options)
    if progress_callback:
        analyzer.add_progress_callback(progress_callback)
    return analyzer.run(m)


def label_rows(report: IdentifiabilityReport) -> List[Dict[str, str]]:
    """Rows for a table widget: one per unknown."""
    return [{'unknown': name, 'label': report.labels[name].value} for name in report.unknowns]
