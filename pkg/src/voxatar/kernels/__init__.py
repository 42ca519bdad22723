"""Hot-kernel backend selection.

The compiled Cython extension (``_native``) is preferred when it was built;
the pure-NumPy reference backend is the fallback. Set VOXATAR_BACKEND=numpy
or =native to force one. Both implement the same sample lattice and
accumulation order, so results agree to float rounding.
"""

import os

from . import _numpy_ref

_FORCED = os.environ.get("VOXATAR_BACKEND", "").strip().lower()

if _FORCED == "numpy":
    _impl = _numpy_ref
elif _FORCED == "native":
    from . import _native as _impl  # raises if the extension was not built
else:
    try:
        from . import _native as _impl
    except ImportError:
        _impl = _numpy_ref

BACKEND_NAME = _impl.BACKEND_NAME
march_forward = _impl.march_forward
march_backward = _impl.march_backward
raster_fill = _impl.raster_fill


def available_backends():
    """Backend modules importable in this build, keyed by name."""
    found = {_numpy_ref.BACKEND_NAME: _numpy_ref}
    try:
        from . import _native

        found[_native.BACKEND_NAME] = _native
    except ImportError:
        pass
    return found
