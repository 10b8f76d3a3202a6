"""
This module implements a Streamlit dashboard for the IoB simulation experiments.

The dashboard lets the user pick one of the experiments (consensus, auth,
auth-multiuser, access), adjust the seed and the node or item counts, run it on
the simulator and inspect or download the resulting metrics table.

To run the application:
streamlit run app.py
"""
import streamlit as st

from config.experiment_defaults import EXPERIMENT_KEYS, EXPERIMENTS
from config.settings import SEED
from src.core.errors import IobError
from src.core.logger.log_setup import log_setup
from src.harness.config import load_config
from src.harness.experiments import load_nodes, run_experiment

st.set_page_config(layout="wide")
log_setup()

# experiment -> key holding its list of counts
COUNT_KEYS = {
    "consensus": "consensus.node_counts",
    "auth": "auth.node_counts",
    "auth-multiuser": "multiuser.user_counts",
    "access": "access.item_counts",
}


@st.cache_data
def get_cached_nodes(data_path: str, synthetic_locations: int, seed: int):
    """Node set of the dataset; cached per (path, size, seed)."""
    cfg = load_config("consensus", **{"data.path": data_path, "data.synthetic_locations": synthetic_locations,
                                      "sim.seed": seed})
    return load_nodes(cfg)


def render_sidebar():
    """
    Renders the sidebar and collects the run settings.

    Returns:
        tuple: (experiment, seed, overrides, run_button) where `overrides` maps
        dotted configuration keys to the values chosen in the UI.
    """
    st.sidebar.title("Simulador IoB")

    experiment = st.sidebar.selectbox("Experimento", options=EXPERIMENTS, index=0)
    seed = st.sidebar.number_input("Semilla", min_value=0, value=SEED, step=1)
    count_key = COUNT_KEYS[experiment]
    counts = st.sidebar.text_input(EXPERIMENT_KEYS[count_key].help, value=EXPERIMENT_KEYS[count_key].default)

    overrides = {count_key: counts}
    with st.sidebar.expander("⚙️ Parámetros"):
        backend = st.selectbox("Backend criptográfico", options=["prod", "test467"], index=0)
        overrides["crypto.backend"] = backend
        data_path = st.text_input("Fichero Gowalla (vacío = sintético)", value="")
        overrides["data.path"] = data_path
        if experiment == "consensus":
            overrides["consensus.trials"] = st.slider("Propuestas por tamaño", 1, 10, 3)
            overrides["gossip.fanout"] = st.slider("Fanout del gossip", 1, 6, 3)
        elif experiment in ("auth", "auth-multiuser"):
            overrides["auth.ca_cap"] = st.slider("Máximo de nodos CA por clúster", 4, 64, 32)
        elif experiment == "access":
            overrides["access.verifiers"] = st.slider("Nodos verificadores", 1, 7, 3)
            overrides["access.scheme"] = st.selectbox("Esquema", options=["additive", "shamir"], index=0)

    run_button = st.sidebar.button("Ejecutar experimento", type="primary")
    return experiment, int(seed), overrides, run_button


def run_dashboard(experiment: str, seed: int, overrides: dict):
    """
    Runs `experiment` with the chosen settings and shows its metrics.

    Args:
        experiment (str): Experiment id.
        seed (int): Master seed.
        overrides (dict): Dotted configuration keys set from the sidebar.
    """
    try:
        cfg = load_config(experiment, **{**overrides, "sim.seed": seed})
    except (IobError, ValueError) as e:
        st.error(f"Configuración no válida: {e}")
        st.stop()

    with st.spinner("Cargando nodos..."):
        nodes = get_cached_nodes(cfg["data.path"], cfg["data.synthetic_locations"], cfg.seed)
    st.info(f"{len(nodes)} nodos disponibles · configuración `{cfg.config_hash()}`")

    with st.spinner(f"Ejecutando {experiment}..."):
        try:
            result = run_experiment(cfg, nodes)
        except IobError as e:
            st.error(f"El experimento falló: {e}")
            st.stop()

    st.markdown(f"### 📊 Resultados: {experiment}")
    st.dataframe(result.frame, use_container_width=True)
    st.download_button("Descargar CSV", result.frame.to_csv(index=False, float_format="%.9f"),
                       file_name=f"{experiment}.csv", mime="text/csv")
    with st.expander("Metadatos"):
        st.json(result.metadata)


def main():
    st.subheader("Experimentos de la pila IoB descentralizada")
    experiment, seed, overrides, run_button = render_sidebar()
    if run_button:
        run_dashboard(experiment, seed, overrides)


if __name__ == "__main__":
    main()
