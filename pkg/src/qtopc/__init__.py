from ._base import *
from ._bounds import *
from ._config import *
from ._control import *
from ._core import *
from ._dynamics import *
from ._experiments import *
from ._feedback import *
from ._log import *
from ._operators import *
from ._sinks import *

__version__ = "0.0.0a0"
