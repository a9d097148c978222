#!/usr/bin/env python3
"""
🧮 SIAN - Interactive Identifiability Analysis
==============================================
Paste or upload a model, pick a probability and seed, watch the phases run,
read the label table and download the JSON report.

    streamlit run streamlit_app.py
"""

import logging
from datetime import datetime
from pathlib import Path

import streamlit as st

from utils.bench_harness import CORPUS_CONFIG, LABEL_TEXT, load_entry, report_to_json
from utils.identifiability_core import ANALYSIS_CONFIG, Label
from utils.model_parser import ModelParseError, ModelValidationError, parse_model, validate_model
from utils.progressive_analyzer import StreamingAnalyzer, label_rows

# Configure logging
logging.basicConfig(level=logging.INFO, format="%(asctime)s - %(levelname)s - %(message)s")
logger = logging.getLogger(__name__)

CORPUS_DIR = Path(__file__).parent / "corpus"

DEMO_MODEL = """model decay
states: x
params: a
inputs:
eq x' = -a*x
output y = x
"""

# Page config
st.set_page_config(
    page_title="🧮 SIAN - Identifiability Analysis",
    page_icon="🧮",
    layout="centered",
    initial_sidebar_state="collapsed"
)

# Initialize session state
if "past_reports" not in st.session_state:
    st.session_state.past_reports = []

st.markdown("""
<style>
.main-title {
    text-align: center;
    color: #2E4057;
    font-size: 2.5rem;
    font-weight: bold;
    margin-bottom: 0.5rem;
}
.subtitle {
    text-align: center;
    color: #666;
    font-size: 1.1rem;
    margin-bottom: 2rem;
}
.label-global { border-left: 4px solid #28a745; padding-left: 0.5rem; }
.label-local { border-left: 4px solid #ffc107; padding-left: 0.5rem; }
.label-none { border-left: 4px solid #dc3545; padding-left: 0.5rem; }
.label-unresolved { border-left: 4px solid #6c757d; padding-left: 0.5rem; }
</style>
""", unsafe_allow_html=True)

# Header
st.markdown('<h1 class="main-title">🧮 SIAN</h1>', unsafe_allow_html=True)
st.markdown('<p class="subtitle">Structural identifiability of rational ODE models</p>', unsafe_allow_html=True)


@st.cache_data
def corpus_models():
    """Bundled corpus models as demos: name -> (text, expected labels)."""
    models = {}
    for path in sorted(CORPUS_DIR.glob("*" + CORPUS_CONFIG["model_suffix"])):
        try:
            entry = load_entry(path)
        except Exception as e:
            logger.warning(f"Skipping corpus entry {path.name}: {e}")
            continue
        models[entry.name] = (path.read_text(encoding="utf-8"),
                              {k: v.value for k, v in entry.expected.items()})
    return models


# Demo models
demos = corpus_models()
col1, col2 = st.columns([3, 1])
with col1:
    demo_name = st.selectbox("📚 Corpus model", ["(decay example)"] + list(demos), index=0)
with col2:
    if st.button("🎯 Load Model", use_container_width=True):
        st.session_state.model_text = DEMO_MODEL if demo_name == "(decay example)" else demos[demo_name][0]

# Step 1: model
st.markdown("### 📝 Step 1: Enter Your Model")
uploaded = st.file_uploader("Upload a .sian-model file", type=["sian-model", "txt"])
if uploaded is not None:
    st.session_state.model_text = uploaded.getvalue().decode("utf-8")

model_text = st.text_area(
    "Model:",
    height=220,
    value=st.session_state.get("model_text", DEMO_MODEL),
)

# Step 2: settings
st.markdown("### ⚙️ Step 2: Choose Settings")
col1, col2 = st.columns(2)
with col1:
    probability = st.slider("🎯 **Probability of correctness**", 0.5, 0.999,
                            float(ANALYSIS_CONFIG["default_probability"]), step=0.001, format="%.3f")
with col2:
    seed = st.number_input("🎲 **Seed**", min_value=0, value=0, step=1)

# Step 3: run
st.markdown("### 🚀 Step 3: Analyze")
if st.button("🚀 Analyze Model", type="primary", use_container_width=True):
    if not model_text.strip():
        st.error("⚠️ Please enter a model first!")
        st.stop()

    try:
        model = parse_model(model_text)
    except ModelParseError as e:
        st.error(f"❌ Parse error: {e}")
        st.stop()

    diagnostics = validate_model(model)
    for warning in diagnostics.warnings:
        st.warning(f"⚠️ {warning}")
    if diagnostics.has_errors:
        for error in diagnostics.errors:
            st.error(f"❌ {error}")
        st.stop()

    analyzer = StreamingAnalyzer(probability=probability, seed=int(seed))
    report = analyzer.analyze_with_streaming_updates(model, st.container())

    if report is None:
        st.error("❌ Analysis failed; see the log for details.")
        st.stop()

    st.markdown("### 📊 Labels")
    expected = demos.get(model.name, (None, {}))[1]
    for row in label_rows(report):
        label = Label(row['label'])
        suffix = ""
        if expected:
            suffix = " ✅" if expected.get(row['unknown']) == row['label'] else f" ⚠️ expected {expected.get(row['unknown'])}"
        st.markdown(f'<div class="label-{label.value}"><strong>{row["unknown"]}</strong>: '
                    f'{LABEL_TEXT[label]}{suffix}</div>', unsafe_allow_html=True)

    col1, col2, col3 = st.columns(3)
    with col1:
        st.metric("Global", len(report.unknowns_with(Label.GLOBAL)))
    with col2:
        st.metric("Local only", len(report.unknowns_with(Label.LOCAL)))
    with col3:
        st.metric("Not identifiable", len(report.unknowns_with(Label.NONE)))

    for note in report.notes:
        st.info(f"ℹ️ {note}")

    report_json = report_to_json(report)
    filename = f"sian_{report.model}_{datetime.now().strftime('%Y%m%d_%H%M%S')}.json"
    st.download_button(
        "📥 Download JSON Report",
        data=report_json,
        file_name=filename,
        mime="application/json",
        use_container_width=True
    )

    st.session_state.past_reports.insert(0, {
        "timestamp": datetime.now().strftime("%Y-%m-%d %H:%M:%S"),
        "model": report.model,
        "probability": report.probability,
        "seed": report.seed,
        "json": report_json,
        "filename": filename,
        "processing_time": sum(report.phase_times.values()),
    })
    st.session_state.past_reports = st.session_state.past_reports[:5]

# History
if st.session_state.past_reports:
    with st.expander(f"📚 Recent Analyses ({len(st.session_state.past_reports)})", expanded=False):
        for i, item in enumerate(st.session_state.past_reports):
            col1, col2, col3 = st.columns([2, 1, 1])
            with col1:
                st.write(f"**{item['timestamp']}** - {item['model']} (p = {item['probability']}, seed {item['seed']})")
            with col2:
                st.metric("Time", f"{item['processing_time']:.1f}s")
            with col3:
                st.download_button("📥", data=item['json'], file_name=item['filename'],
                                   mime="application/json", key=f"dl_{i}")
