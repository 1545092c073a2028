import numpy as np
import pytest

from datos_sinteticos import (ClipSpec, make_clip, make_multishot, patron_canales,
                              sample_clip_spec, split_clip, texto_parametros)
from errores import ErrorContrato, ErrorEspecificacion


def spec(**cambios):
    base = dict(center=(1.0, 1.5), velocity=(0.0, 0.0), radius=0.8, amplitude=1.0,
                grid=(6, 4, 4), d=12)
    base.update(cambios)
    return ClipSpec(**base)


def test_velocidad_nula_repite_el_fotograma():
    video, texto = make_clip(spec())
    assert video.shape == (6, 4, 4, 12) and texto.shape == (3, 12)
    for f in range(1, 6):
        assert np.array_equal(video[f], video[0])


def test_desplazamiento_entero_en_forma_cerrada():
    video, _ = make_clip(spec(center=(0.0, 1.5), velocity=(1.0, 0.0), grid=(3, 4, 4)))
    # el blob avanza una fila por fotograma
    assert np.allclose(video[1, 1:], video[0, :-1], atol=1e-15)
    assert np.allclose(video[2, 1:], video[1, :-1], atol=1e-15)


def test_clip_determinista_con_ruido():
    a = make_clip(sample_clip_spec(7, grid=(6, 3, 3), d=6, noise=0.1))
    b = make_clip(sample_clip_spec(7, grid=(6, 3, 3), d=6, noise=0.1))
    assert np.array_equal(a.video, b.video) and np.array_equal(a.text, b.text)
    c = make_clip(sample_clip_spec(8, grid=(6, 3, 3), d=6, noise=0.1))
    assert not np.array_equal(a.video, c.video)


def test_trayectoria_fuera_de_la_rejilla():
    with pytest.raises(ErrorEspecificacion):
        make_clip(spec(velocity=(1.0, 0.0)))
    with pytest.raises(ErrorEspecificacion):
        make_clip(spec(center=(-0.5, 1.0)))


def test_especificaciones_invalidas():
    with pytest.raises(ErrorEspecificacion):
        spec(grid=(4, 4, 4))
    with pytest.raises(ErrorEspecificacion):
        spec(radius=0.0)
    with pytest.raises(ErrorEspecificacion):
        spec(noise=-1.0)


@pytest.mark.parametrize("semilla", range(20))
def test_parametros_muestreados_son_validos(semilla):
    clip = make_clip(sample_clip_spec(semilla, grid=(12, 4, 4), d=12))
    assert np.all(np.isfinite(clip.video))


def test_patron_con_rms_unidad():
    patron = patron_canales(48, 0.3)
    assert np.sqrt(np.mean(patron ** 2)) == pytest.approx(1.0)


def test_texto_codifica_los_parametros():
    a, b = spec(), spec(amplitude=1.3)
    assert not np.array_equal(texto_parametros(a), texto_parametros(b))
    assert texto_parametros(spec(n_text=0)).shape == (0, 12)


def test_split_clip():
    clip = make_clip(sample_clip_spec(3, grid=(12, 2, 2), d=6))
    unico = split_clip(clip, 1)
    assert len(unico) == 1 and np.array_equal(unico[0].video.data, clip.video)
    tres = split_clip(clip, 3)
    assert [s.frames for s in tres] == [4, 4, 4]
    assert np.array_equal(np.concatenate([s.video.data for s in tres]), clip.video)
    assert all(np.array_equal(s.text.data, clip.text) for s in tres)
    with pytest.raises(ErrorContrato):
        split_clip(clip, 5)


def test_multiplano():
    tomas = make_multishot(4, n_shots=3, seg_frames=2, grid_hw=(3, 3), d=6)
    assert len(tomas) == 3
    assert all(t.shape == (2, 3, 3, 3) for t in tomas)
    otra = make_multishot(4, n_shots=3, seg_frames=2, grid_hw=(3, 3), d=6)
    assert all(np.array_equal(a.video.data, b.video.data) for a, b in zip(tomas, otra))
    assert not np.array_equal(tomas[0].video.data, tomas[1].video.data)
