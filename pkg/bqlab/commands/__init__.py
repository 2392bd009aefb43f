import bqlab.commands.simulate  # noqa: E402, F401
import bqlab.commands.verify  # noqa: E402, F401
import bqlab.commands.diagnose  # noqa: E402, F401
import bqlab.commands.config  # noqa: E402, F401
